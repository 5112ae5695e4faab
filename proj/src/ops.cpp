#include "virt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "virt/error.hpp"

namespace virt {

namespace {

using Backward = std::function<void(const TapeOp&)>;

Tensor finish(const char* name, std::vector<Tensor> inputs, Tensor out, Backward backward) {
  Tape* tape = active_tape();
  if (!tape) return out;
  bool tracked = std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return out;
  out.set_requires_grad(true);
  tape->record(name, std::move(inputs), out, std::move(backward));
  return out;
}

// Gradient sink for input i, or an empty span when it needs no gradient.
std::span<double> sink(const TapeOp& op, std::size_t i) {
  Tensor t = op.inputs[i];
  if (!t.requires_grad()) return {};
  return t.grad_buffer();
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> view(std::span<const double> d, std::size_t rows, std::size_t cols) {
  return {d.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

Eigen::Map<RowMajor> view(std::span<double> d, std::size_t rows, std::size_t cols) {
  return {d.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return finish(name, {a}, Tensor(a.shape(), std::move(y)), [deriv](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty()) return;
    auto x = op.inputs[0].data();
    auto dy = op.output.grad();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += dy[i] * deriv(x[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  std::vector<double> C(p * r);
  view(std::span<double>(C), p, r).noalias() = view(a.data(), p, q) * view(b.data(), q, r);
  return finish("matmul", {a, b}, Tensor({p, r}, std::move(C)), [p, q, r](const TapeOp& op) {
    const auto dC = view(op.output.grad(), p, r);
    if (auto dA = sink(op, 0); !dA.empty())
      view(dA, p, q).noalias() += dC * view(op.inputs[1].data(), q, r).transpose();
    if (auto dB = sink(op, 1); !dB.empty())
      view(dB, q, r).noalias() += view(op.inputs[0].data(), p, q).transpose() * dC;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
  if (b.cols() != q) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_string(a.shape()) +
                         " and transposed " + shape_string(b.shape()));
  }
  std::vector<double> C(p * r);
  view(std::span<double>(C), p, r).noalias() = view(a.data(), p, q) * view(b.data(), r, q).transpose();
  return finish("matmul_nt", {a, b}, Tensor({p, r}, std::move(C)), [p, q, r](const TapeOp& op) {
    const auto dC = view(op.output.grad(), p, r);
    if (auto dA = sink(op, 0); !dA.empty())
      view(dA, p, q).noalias() += dC * view(op.inputs[1].data(), r, q);
    if (auto dB = sink(op, 1); !dB.empty())
      view(dB, r, q).noalias() += dC.transpose() * view(op.inputs[0].data(), p, q);
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t p = a.rows(), q = a.cols();
  auto A = a.data();
  std::vector<double> T(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) T[j * p + i] = A[i * q + j];
  return finish("transpose", {a}, Tensor({q, p}, std::move(T)), [p, q](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty()) return;
    auto dT = op.output.grad();
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) g[i * q + j] += dT[j * p + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<double> z(a.data().begin(), a.data().end());
  return finish("reshape", {a}, Tensor(std::move(shape), std::move(z)), [](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty()) return;
    auto dz = op.output.grad();
    for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + y[i];
  return finish("add", {a, b}, Tensor(a.shape(), std::move(z)), [](const TapeOp& op) {
    auto dz = op.output.grad();
    for (std::size_t k = 0; k < 2; ++k)
      if (auto g = sink(op, k); !g.empty())
        for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] - y[i];
  return finish("sub", {a, b}, Tensor(a.shape(), std::move(z)), [](const TapeOp& op) {
    auto dz = op.output.grad();
    if (auto g = sink(op, 0); !g.empty())
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i];
    if (auto g = sink(op, 1); !g.empty())
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] -= dz[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] * y[i];
  return finish("mul", {a, b}, Tensor(a.shape(), std::move(z)), [](const TapeOp& op) {
    auto dz = op.output.grad();
    auto x = op.inputs[0].data();
    auto y = op.inputs[1].data();
    if (auto g = sink(op, 0); !g.empty())
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i] * y[i];
    if (auto g = sink(op, 1); !g.empty())
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i] * x[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto x = a.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] * factor;
  return finish("scale", {a}, Tensor(a.shape(), std::move(z)), [factor](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty()) return;
    auto dz = op.output.grad();
    for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i] * factor;
  });
}

Tensor add_bias(const Tensor& a, const Tensor& b) {
  require_matrix(a, "add_bias");
  const std::size_t p = a.rows(), d = a.cols();
  if (b.rank() != 1 || b.dim(0) != d) {
    throw DimensionError("add_bias: bias " + shape_string(b.shape()) + " does not fit rows of " +
                         shape_string(a.shape()));
  }
  auto x = a.data();
  auto v = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] = x[i * d + j] + v[j];
  return finish("add_bias", {a, b}, Tensor(a.shape(), std::move(z)), [p, d](const TapeOp& op) {
    auto dz = op.output.grad();
    if (auto g = sink(op, 0); !g.empty())
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += dz[i];
    if (auto g = sink(op, 1); !g.empty())
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += dz[i * d + j];
  });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  static constexpr double c = 0.7978845608028654;  // √(2/π)
  static constexpr double k = 0.044715;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x) {
        const double t = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

Tensor max_pairwise(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_pairwise");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] >= y[i] ? x[i] : y[i];
  return finish("max_pairwise", {a, b}, Tensor(a.shape(), std::move(z)), [](const TapeOp& op) {
    auto dz = op.output.grad();
    auto x = op.inputs[0].data();
    auto y = op.inputs[1].data();
    auto ga = sink(op, 0);
    auto gb = sink(op, 1);
    // Ties route the gradient to the first operand.
    for (std::size_t i = 0; i < dz.size(); ++i) {
      if (x[i] >= y[i]) {
        if (!ga.empty()) ga[i] += dz[i];
      } else if (!gb.empty()) {
        gb[i] += dz[i];
      }
    }
  });
}

Tensor concat_last_dim(std::initializer_list<Tensor> parts) {
  return concat_last_dim(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_last_dim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_last_dim: nothing to concatenate");
  const std::size_t rank = parts[0].rank();
  if (rank != 1 && rank != 2) {
    throw DimensionError("concat_last_dim: unsupported rank " + std::to_string(rank));
  }
  const std::size_t rows = rank == 1 ? 1 : parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& part : parts) {
    if (part.rank() != rank || (rank == 2 && part.rows() != rows)) {
      throw DimensionError("concat_last_dim: incompatible part " + shape_string(part.shape()) +
                           " after " + shape_string(parts[0].shape()));
    }
    widths.push_back(part.shape().back());
    total += widths.back();
  }
  std::vector<double> z(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(src.data() + i * widths[k], widths[k], z.data() + i * total + col);
    col += widths[k];
  }
  Shape shape = rank == 1 ? Shape{total} : Shape{rows, total};
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return finish("concat_last_dim", std::move(inputs), Tensor(std::move(shape), std::move(z)),
                [rows, total, widths](const TapeOp& op) {
                  auto dz = op.output.grad();
                  std::size_t col = 0;
                  for (std::size_t k = 0; k < widths.size(); ++k) {
                    if (auto g = sink(op, k); !g.empty())
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                          g[i * widths[k] + j] += dz[i * total + col + j];
                    col += widths[k];
                  }
                });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_rows");
  const std::size_t d = a.cols();
  if (start + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_string(a.shape()));
  }
  auto x = a.data();
  std::vector<double> z(x.begin() + start * d, x.begin() + (start + count) * d);
  return finish("slice_rows", {a}, Tensor({count, d}, std::move(z)),
                [start, count, d](const TapeOp& op) {
                  auto g = sink(op, 0);
                  if (g.empty()) return;
                  auto dz = op.output.grad();
                  for (std::size_t i = 0; i < count * d; ++i) g[start * d + i] += dz[i];
                });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t p = a.rows(), q = a.cols();
  if (start + count > q) {
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_string(a.shape()));
  }
  auto x = a.data();
  std::vector<double> z(p * count);
  for (std::size_t i = 0; i < p; ++i)
    std::copy_n(x.data() + i * q + start, count, z.data() + i * count);
  return finish("slice_cols", {a}, Tensor({p, count}, std::move(z)),
                [p, q, start, count](const TapeOp& op) {
                  auto g = sink(op, 0);
                  if (g.empty()) return;
                  auto dz = op.output.grad();
                  for (std::size_t i = 0; i < p; ++i)
                    for (std::size_t j = 0; j < count; ++j)
                      g[i * q + start + j] += dz[i * count + j];
                });
}

Tensor mean_rows(const Tensor& x, std::size_t valid_rows) {
  require_matrix(x, "mean_rows");
  const std::size_t d = x.cols();
  if (valid_rows == 0 || valid_rows > x.rows()) {
    throw ContractError("mean_rows: " + std::to_string(valid_rows) + " valid rows of " +
                        shape_string(x.shape()));
  }
  auto v = x.data();
  std::vector<double> z(d, 0.0);
  for (std::size_t i = 0; i < valid_rows; ++i)
    for (std::size_t j = 0; j < d; ++j) z[j] += v[i * d + j];
  const double inv = 1.0 / static_cast<double>(valid_rows);
  for (auto& value : z) value *= inv;
  return finish("mean_rows", {x}, Tensor({d}, std::move(z)), [valid_rows, d, inv](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty()) return;
    auto dz = op.output.grad();
    for (std::size_t i = 0; i < valid_rows; ++i)
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += dz[j] * inv;
  });
}

namespace {

Tensor softmax_impl(const Tensor& s, const Tensor* mask) {
  require_matrix(s, "softmax_rows");
  if (mask) require_same_shape(s, *mask, "softmax_rows mask");
  const std::size_t p = s.rows(), q = s.cols();
  auto x = s.data();
  std::vector<double> y(p * q);
  std::vector<double> shifted(q);
  for (std::size_t i = 0; i < p; ++i) {
    bool any_valid = !mask;
    for (std::size_t j = 0; j < q; ++j) {
      double v = x[i * q + j];
      if (mask) {
        if ((*mask)(i, j) == 0.0) {
          v += kMaskedScore;
        } else {
          any_valid = true;
        }
      }
      shifted[j] = v;
    }
    if (!any_valid || q == 0) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(i) + " of " +
                               shape_string(s.shape()) + " has no unmasked entry");
    }
    const double top = *std::max_element(shifted.begin(), shifted.end());
    double total = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      shifted[j] = std::exp(shifted[j] - top);
      total += shifted[j];
    }
    for (std::size_t j = 0; j < q; ++j) y[i * q + j] = shifted[j] / total;
  }
  std::vector<Tensor> inputs{s};
  return finish("softmax_rows", std::move(inputs), Tensor({p, q}, std::move(y)),
                [p, q](const TapeOp& op) {
                  auto g = sink(op, 0);
                  if (g.empty()) return;
                  auto y = op.output.data();
                  auto dy = op.output.grad();
                  for (std::size_t i = 0; i < p; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < q; ++j) dot += y[i * q + j] * dy[i * q + j];
                    for (std::size_t j = 0; j < q; ++j)
                      g[i * q + j] += y[i * q + j] * (dy[i * q + j] - dot);
                  }
                });
}

}  // namespace

Tensor softmax_rows(const Tensor& scores) { return softmax_impl(scores, nullptr); }

Tensor softmax_rows(const Tensor& scores, const Tensor& mask) {
  return softmax_impl(scores, &mask);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_matrix(x, "layer_norm");
  const std::size_t p = x.rows(), d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: need at least 2 features, got " + std::to_string(d));
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not fit " + shape_string(x.shape()));
  }
  auto v = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<double> xhat(p * d);
  std::vector<double> inv_std(p);
  std::vector<double> y(p * d);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < p; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += v[i * d + j];
    mean *= inv_d;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = v[i * d + j] - mean;
      var += c * c;
    }
    var *= inv_d;
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (v[i * d + j] - mean) * inv_std[i];
      y[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  return finish("layer_norm", {x, gain, bias}, Tensor({p, d}, std::move(y)),
                [p, d, inv_d, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TapeOp& op) {
                  auto dy = op.output.grad();
                  auto gv = op.inputs[1].data();
                  if (auto gx = sink(op, 0); !gx.empty()) {
                    std::vector<double> dxhat(d);
                    for (std::size_t i = 0; i < p; ++i) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        dxhat[j] = dy[i * d + j] * gv[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[i * d + j];
                      }
                      mean_d *= inv_d;
                      mean_dx *= inv_d;
                      for (std::size_t j = 0; j < d; ++j)
                        gx[i * d + j] +=
                            inv_std[i] * (dxhat[j] - mean_d - xhat[i * d + j] * mean_dx);
                    }
                  }
                  if (auto gg = sink(op, 1); !gg.empty())
                    for (std::size_t i = 0; i < p; ++i)
                      for (std::size_t j = 0; j < d; ++j) gg[j] += dy[i * d + j] * xhat[i * d + j];
                  if (auto gb = sink(op, 2); !gb.empty())
                    for (std::size_t i = 0; i < p; ++i)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += dy[i * d + j];
                });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t vocab = table.rows(), d = table.cols();
  auto t = table.data();
  std::vector<double> z(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DataError("id " + std::to_string(ids[i]) + " out of range for table of " +
                      std::to_string(vocab) + " rows");
    }
    std::copy_n(t.data() + static_cast<std::size_t>(ids[i]) * d, d, z.data() + i * d);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return finish("gather_rows", {table}, Tensor({ids.size(), d}, std::move(z)),
                [rows = std::move(rows), d](const TapeOp& op) {
                  auto g = sink(op, 0);
                  if (g.empty()) return;
                  auto dz = op.output.grad();
                  for (std::size_t i = 0; i < rows.size(); ++i)
                    for (std::size_t j = 0; j < d; ++j)
                      g[static_cast<std::size_t>(rows[i]) * d + j] += dz[i * d + j];
                });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return finish("sum", {a}, Tensor::scalar(total), [](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty()) return;
    const double dz = op.output.grad()[0];
    for (auto& v : g) v += dz;
  });
}

Tensor sum_squares(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v * v;
  return finish("sum_squares", {a}, Tensor::scalar(total), [](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty()) return;
    const double dz = op.output.grad()[0];
    auto x = op.inputs[0].data();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += 2.0 * x[i] * dz;
  });
}

Tensor frobenius_norm(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v * v;
  const double norm = std::sqrt(total);
  return finish("frobenius_norm", {a}, Tensor::scalar(norm), [norm](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty() || norm == 0.0) return;
    const double dz = op.output.grad()[0];
    auto x = op.inputs[0].data();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += dz * x[i] / norm;
  });
}

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double top = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(v - top);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 1) {
    throw DimensionError("cross_entropy: logits must be a vector, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t classes = logits.dim(0);
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " outside " +
                        std::to_string(classes) + " classes");
  }
  auto z = logits.data();
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - top);
  const double loss = top + std::log(total) - z[static_cast<std::size_t>(label)];
  return finish("cross_entropy", {logits}, Tensor::scalar(loss), [label](const TapeOp& op) {
    auto g = sink(op, 0);
    if (g.empty()) return;
    const double dz = op.output.grad()[0];
    auto probs = softmax_values(op.inputs[0].data());
    for (std::size_t i = 0; i < probs.size(); ++i)
      g[i] += dz * (probs[i] - (static_cast<int>(i) == label ? 1.0 : 0.0));
  });
}

Tensor key_mask(std::size_t p, std::size_t q, std::size_t valid) {
  std::vector<double> m(p * q, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < std::min(valid, q); ++j) m[i * q + j] = 1.0;
  return Tensor({p, q}, std::move(m));
}

}  // namespace virt
