#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "advids/data.hpp"
#include "advids/error.hpp"
#include "advids/random.hpp"

namespace advids {

RawDataset synth_generate(const SynthSpec& spec) {
  if (spec.n < 10) fail(ErrorKind::parameter, "synthetic data needs n >= 10");
  if (spec.informative + spec.coarse + spec.noise == 0) {
    fail(ErrorKind::parameter, "synthetic data needs at least one feature");
  }
  if (!(spec.attack_fraction > 0.0 && spec.attack_fraction < 1.0)) {
    fail(ErrorKind::parameter, "attack_fraction must lie in (0, 1)");
  }
  if (!(spec.outlier_rate >= 0.0 && spec.outlier_rate <= 1.0)) {
    fail(ErrorKind::parameter, "outlier_rate must lie in [0, 1]");
  }
  if (spec.spread < 0.0 || spec.coarse_spread < 0.0) {
    fail(ErrorKind::parameter, "spreads must be non-negative");
  }

  Rng rng = derive_rng(spec.seed, 101);
  RawDataset data;
  const std::size_t attacks = static_cast<std::size_t>(
      std::llround(spec.attack_fraction * static_cast<double>(spec.n)));
  data.labels.assign(spec.n, 0);
  std::fill_n(data.labels.begin(), attacks, 1);
  shuffle(std::span(data.labels), rng);

  auto add_feature = [&](const std::string& name, double separation, double spread,
                         bool informative) {
    Column col{name, ColumnKind::numeric, {}, {}};
    col.numeric.reserve(spec.n);
    const double offset = informative ? separation * spread / 2.0 : 0.0;
    for (std::size_t r = 0; r < spec.n; ++r) {
      const double centre = 0.5 + (data.labels[r] == 1 ? offset : -offset);
      double v = centre + spread * standard_normal(rng);
      if (spec.outlier_rate > 0.0 && uniform01(rng) < spec.outlier_rate) v = uniform01(rng);
      col.numeric.push_back(std::clamp(v, 0.0, 1.0));
    }
    data.columns.push_back(std::move(col));
  };

  for (std::size_t j = 0; j < spec.coarse; ++j) {
    add_feature("coarse" + std::to_string(j), spec.coarse_separation, spec.coarse_spread, true);
  }
  for (std::size_t j = 0; j < spec.informative; ++j) {
    add_feature("informative" + std::to_string(j), spec.separation, spec.spread, true);
  }
  for (std::size_t j = 0; j < spec.noise; ++j) {
    add_feature("noise" + std::to_string(j), 0.0, spec.spread, false);
  }
  if (spec.categorical) {
    static constexpr std::array<const char*, 3> kProtocols = {"icmp", "tcp", "udp"};
    Column col{"proto", ColumnKind::categorical, {}, {}};
    col.categorical.reserve(spec.n);
    for (std::size_t r = 0; r < spec.n; ++r) {
      col.categorical.emplace_back(kProtocols[bounded(rng, kProtocols.size())]);
    }
    data.columns.push_back(std::move(col));
  }
  return data;
}

}  // namespace advids
