#include "retrofit/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "retrofit/error.hpp"

namespace retrofit {

namespace {

// Returns raw entropy in nats; fills `log_q` with log-probabilities.
double raw_entropy(std::span<const double> logits, std::span<double> log_q) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - top);
  const double log_z = std::log(sum);
  double h = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    log_q[c] = (logits[c] - top) - log_z;
    h -= std::exp(log_q[c]) * log_q[c];
  }
  return h;
}

}  // namespace

double normalized_entropy(std::span<const double> logits) {
  if (logits.size() < 2) throw InvalidArgument("entropy needs at least 2 logits");
  std::vector<double> log_q(logits.size());
  const double h = raw_entropy(logits, log_q) / std::log(static_cast<double>(logits.size()));
  return std::clamp(h, 0.0, 1.0);
}

void normalized_entropy_backward(std::span<const double> logits, double upstream,
                                 std::span<double> grad) {
  if (logits.size() < 2) throw InvalidArgument("entropy needs at least 2 logits");
  if (grad.size() != logits.size()) throw InvalidArgument("entropy gradient size mismatch");
  std::vector<double> log_q(logits.size());
  const double h = raw_entropy(logits, log_q);
  const double scale = upstream / std::log(static_cast<double>(logits.size()));
  // dH/dl_j = -q_j (log q_j + H)
  for (std::size_t j = 0; j < logits.size(); ++j) {
    grad[j] -= scale * std::exp(log_q[j]) * (log_q[j] + h);
  }
}

DenseMap compute_entropy(const DenseMap& logits) {
  const int channels = logits.channels();
  if (channels < 2) throw InvalidArgument("compute_entropy: logits need C >= 2");
  const double log_c = std::log(static_cast<double>(channels));
  std::vector<double> out(logits.pixel_count());
  std::vector<double> log_q(static_cast<std::size_t>(channels));
  for (int r = 0; r < logits.height(); ++r) {
    for (int c = 0; c < logits.width(); ++c) {
      const auto px = logits.pixel(r, c);
      for (double v : px) {
        if (!std::isfinite(v)) {
          throw InvalidInput("compute_entropy: non-finite logit at pixel " + pixel_name(r, c));
        }
      }
      out[static_cast<std::size_t>(r) * logits.width() + c] =
          std::clamp(raw_entropy(px, log_q) / log_c, 0.0, 1.0);
    }
  }
  return DenseMap(logits.height(), logits.width(), 1, MapKind::kEntropy, std::move(out),
                  logits.precision());
}

}  // namespace retrofit
