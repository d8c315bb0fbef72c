#include "stalegraph/time_encoder.hpp"

#include <cmath>

#include "stalegraph/errors.hpp"

namespace stalegraph {

std::vector<double> TimeEncoder::encode(double delta_t) const {
  std::vector<double> out(frequencies.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::cos(delta_t * frequencies[j] + phases[j]);
  return out;
}

TimeEncoder TimeEncoder::from(const ParameterStore& params) {
  const Matrix& f = params.at("time.freq");
  const Matrix& p = params.at("time.phase");
  if (!f.same_shape(p)) throw ConfigError("time encoder: frequency/phase shape mismatch");
  return {f.values(), p.values()};
}

std::vector<double> time_encode(const TimeEncoder& enc, double delta_t) { return enc.encode(delta_t); }

std::vector<double> geometric_frequencies(std::size_t dim) {
  std::vector<double> f(dim);
  for (std::size_t j = 0; j < dim; ++j)
    f[j] = 1.0 / std::pow(10.0, 4.0 * static_cast<double>(j) / static_cast<double>(dim));
  return f;
}

ad::Var time_encode(const BoundParams& p, const Matrix& delta_column) {
  ad::Tape& t = p.tape();
  auto scaled = ad::matmul(t.constant(delta_column), p["time.freq"]);
  return ad::cos(ad::add_row(scaled, p["time.phase"]));
}

}  // namespace stalegraph
