#pragma once

#include <string>
#include <string_view>

#include "nona/autodiff.hpp"
#include "nona/tensor.hpp"

namespace nona {

enum class SimilarityKind { NegL2, NegL1, Dot, Cosine };

// Config spellings: neg_l2, neg_l1, dot, cosine.
std::string to_string(SimilarityKind kind);
SimilarityKind parse_similarity(std::string_view name);

// Added under the square root when differentiating -L2, so coincident points
// get a zero gradient instead of 0/0.
inline constexpr double kNegL2GradSmoothing = 1e-12;

// S[i][j] = sim(Z[i], Z_N[j]) for Z: b x d and Z_N: N x d.
//   NegL2  -sqrt(sum (z - z')^2)
//   NegL1  -sum |z - z'|            (subgradient sign(0) = 0)
//   Dot    <z, z'>
//   Cosine <z, z'> / (|z| |z'|)     (zero-norm rows are a DomainError)
Tensor pairwise_similarity(SimilarityKind kind, const Tensor& Z, const Tensor& Z_N);
Var pairwise_similarity(SimilarityKind kind, Var Z, Var Z_N);

}  // namespace nona
