#pragma once

#include <span>
#include <vector>

#include "retrofit/dense_map.hpp"

namespace retrofit {

// Softmax entropy of one logit vector divided by log(C), clamped to [0, 1].
// Uses max-subtraction so large logits do not overflow.
double normalized_entropy(std::span<const double> logits);

// Gradient of normalized_entropy with respect to the logits, scaled by
// `upstream`. Writes logits.size() values into `grad` (accumulating).
void normalized_entropy_backward(std::span<const double> logits, double upstream,
                                 std::span<double> grad);

/// Per-pixel normalized softmax entropy of a logit map (C >= 2).
///
/// Throws InvalidInput naming the first pixel with a non-finite logit.
DenseMap compute_entropy(const DenseMap& logits);

}  // namespace retrofit
