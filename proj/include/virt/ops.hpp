#pragma once

#include <span>
#include <vector>

#include "virt/tensor.hpp"

// Differentiable tensor operations. Every op records itself onto the active
// tape when at least one input requires a gradient; otherwise it is a plain
// forward computation. Reductions sum in index order so results are
// bit-reproducible.
namespace virt {

inline constexpr double kMaskedScore = -1e9;
inline constexpr double kLayerNormEpsilon = 1e-6;

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Same data under a new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Adds vector b[d] to every row of a[p×d].
Tensor add_bias(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
// Tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
Tensor gelu(const Tensor& a);
Tensor max_pairwise(const Tensor& a, const Tensor& b);

// Concatenates along the last axis. All parts share rank (1 or 2) and, for
// matrices, row count.
Tensor concat_last_dim(std::span<const Tensor> parts);
Tensor concat_last_dim(std::initializer_list<Tensor> parts);

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);

// Averages the first `valid_rows` rows of x[p×d] into a vector[d].
Tensor mean_rows(const Tensor& x, std::size_t valid_rows);

// Row softmax. Entries where mask == 0 get kMaskedScore added before
// exponentiation and come out as exactly 0. Throws DegenerateRowError when a
// row is fully masked.
Tensor softmax_rows(const Tensor& scores);
Tensor softmax_rows(const Tensor& scores, const Tensor& mask);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Rows of table[V×d] selected by ids.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

Tensor sum(const Tensor& a);
Tensor sum_squares(const Tensor& a);
// sqrt(Σ a²); the gradient at a == 0 is taken to be 0.
Tensor frobenius_norm(const Tensor& a);
// -log softmax(logits)[label] for a vector of logits.
Tensor cross_entropy(const Tensor& logits, int label);

std::vector<double> softmax_values(std::span<const double> logits);

// Column-validity mask for p query rows over q keys of which the first
// `valid` are real.
Tensor key_mask(std::size_t p, std::size_t q, std::size_t valid);

}  // namespace virt
