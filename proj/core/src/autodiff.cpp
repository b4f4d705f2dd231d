#include "corisk/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "corisk/error.hpp"

namespace corisk {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, std::string_view expected) {
  throw ShapeError(std::string(op) + ": shape " + shape_string(a) + ", expected " +
                   std::string(expected));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor: " + std::to_string(data_.size()) + " values for shape " +
                     shape_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("tensor: item() on shape " + shape_string(shape_));
  return data_[0];
}

std::string_view to_string(OpTag op) {
  switch (op) {
    case OpTag::Leaf: return "leaf";
    case OpTag::MatMul: return "matmul";
    case OpTag::Add: return "add";
    case OpTag::Relu: return "relu";
    case OpTag::Sigmoid: return "sigmoid";
    case OpTag::Scale: return "scale";
    case OpTag::Inner: return "inner";
    case OpTag::OuterScale: return "outer_scale";
    case OpTag::Concat: return "concat";
    case OpTag::MeanSqError: return "mean_sq_error";
    case OpTag::Conv2d: return "conv2d";
    case OpTag::MaxPool: return "max_pool";
    case OpTag::Flatten: return "flatten";
    case OpTag::Embedding: return "embedding";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{OpTag::Leaf, std::move(value), {}, {}, {}});
  has_grads_ = false;
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpTag op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
  Node node{op, std::move(value), {}, {}, std::move(backward)};
  for (const Var& p : parents) {
    if (p.tape() != this) throw ContractError(std::string(to_string(op)) + ": operand from another tape");
    node.parents.push_back(p.id());
  }
  nodes_.push_back(std::move(node));
  has_grads_ = false;
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  if (!has_grads_) throw ContractError("tape: gradients requested before backward()");
  return nodes_.at(id).grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this || loss.id() >= nodes_.size()) {
    throw ContractError("backward: loss is not on this tape");
  }
  if (nodes_[loss.id()].value.size() != 1 || nodes_[loss.id()].value.rank() != 0) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                        shape_string(nodes_[loss.id()].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor(n.value.shape(), 0.0);
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.op == OpTag::Leaf || !n.backward) continue;
    BackwardContext ctx{n.value, n.grad, {}, {}};
    for (std::size_t p : n.parents) {
      ctx.in_values.push_back(&nodes_[p].value);
      ctx.in_grads.push_back(&nodes_[p].grad);
    }
    n.backward(ctx);
  }
  has_grads_ = true;
}

namespace ad {

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error("matmul", sa, sb);
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor out(Shape{m, n}, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return a.tape()->record(OpTag::MatMul, std::move(out), {a, b}, [m, k, n](BackwardContext& c) {
    const Tensor& A = *c.in_values[0];
    const Tensor& B = *c.in_values[1];
    Tensor& dA = *c.in_grads[0];
    Tensor& dB = *c.in_grads[1];
    const Tensor& g = c.out_grad;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double aip = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          acc += gij * B[p * n + j];
          dB[p * n + j] += aip * gij;
        }
        dA[i * k + p] += acc;
      }
    }
  });
}

Var add(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.tape()->record(OpTag::Add, std::move(out), {a, b}, [](BackwardContext& c) {
      for (std::size_t i = 0; i < c.out_grad.size(); ++i) {
        (*c.in_grads[0])[i] += c.out_grad[i];
        (*c.in_grads[1])[i] += c.out_grad[i];
      }
    });
  }
  if (sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0]) {
    const std::size_t rows = sa[0], d = sa[1];
    Tensor out = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] += b.value()[j];
    }
    return a.tape()->record(OpTag::Add, std::move(out), {a, b}, [rows, d](BackwardContext& c) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          const double g = c.out_grad[r * d + j];
          (*c.in_grads[0])[r * d + j] += g;
          (*c.in_grads[1])[j] += g;
        }
      }
    });
  }
  shape_error("add", sa, sb);
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return a.tape()->record(OpTag::Relu, std::move(out), {a}, [](BackwardContext& c) {
    const Tensor& x = *c.in_values[0];
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) (*c.in_grads[0])[i] += c.out_grad[i];
    }
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = stable_sigmoid(v);
  return a.tape()->record(OpTag::Sigmoid, std::move(out), {a}, [](BackwardContext& c) {
    for (std::size_t i = 0; i < c.out_value.size(); ++i) {
      const double s = c.out_value[i];
      (*c.in_grads[0])[i] += c.out_grad[i] * s * (1.0 - s);
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape()->record(OpTag::Scale, std::move(out), {a}, [factor](BackwardContext& c) {
    for (std::size_t i = 0; i < c.out_grad.size(); ++i) (*c.in_grads[0])[i] += factor * c.out_grad[i];
  });
}

Var inner(Var u, Var v) {
  const Shape& su = u.shape();
  const Shape& sv = v.shape();
  if (sv.size() != 1 || su.empty() || su.size() > 2 || su.back() != sv[0]) shape_error("inner", su, sv);
  const std::size_t d = sv[0];
  const std::size_t rows = su.size() == 2 ? su[0] : 1;
  Tensor out = su.size() == 2 ? Tensor(Shape{rows}, 0.0) : Tensor(Shape{}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += u.value()[r * d + j] * v.value()[j];
    out[r] = acc;
  }
  return u.tape()->record(OpTag::Inner, std::move(out), {u, v}, [rows, d](BackwardContext& c) {
    const Tensor& U = *c.in_values[0];
    const Tensor& V = *c.in_values[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = c.out_grad[r];
      for (std::size_t j = 0; j < d; ++j) {
        (*c.in_grads[0])[r * d + j] += g * V[j];
        (*c.in_grads[1])[j] += g * U[r * d + j];
      }
    }
  });
}

Var outer_scale(Var x, Var s) {
  const Shape& sx = x.shape();
  const Shape& ss = s.shape();
  const bool single = sx.size() == 1 && ss.empty();
  const bool batched = sx.size() == 2 && ss.size() == 1 && ss[0] == sx[0];
  if (!single && !batched) shape_error("outer_scale", sx, ss);
  const std::size_t rows = batched ? sx[0] : 1;
  const std::size_t d = sx.back();
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] *= s.value()[r];
  }
  return x.tape()->record(OpTag::OuterScale, std::move(out), {x, s}, [rows, d](BackwardContext& c) {
    const Tensor& X = *c.in_values[0];
    const Tensor& S = *c.in_values[1];
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double g = c.out_grad[r * d + j];
        (*c.in_grads[0])[r * d + j] += g * S[r];
        acc += g * X[r * d + j];
      }
      (*c.in_grads[1])[r] += acc;
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (first.empty() || first.size() > 2) shape_error("concat", first, "rank 1 or 2");
  const std::size_t rows = first.size() == 2 ? first[0] : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || (s.size() == 2 && s[0] != rows)) shape_error("concat", first, s);
    widths.push_back(s.back());
    total += s.back();
  }
  Tensor out(first.size() == 2 ? Shape{rows, total} : Shape{total}, 0.0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += widths[k];
  }
  return parts[0].tape()->record(OpTag::Concat, std::move(out), parts, [rows, total, widths](BackwardContext& c) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < widths[k]; ++j) {
          (*c.in_grads[k])[r * widths[k] + j] += c.out_grad[r * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

Var mean_sq_error(Var pred, Var target) {
  if (pred.shape() != target.shape()) shape_error("mean_sq_error", pred.shape(), target.shape());
  const std::size_t n = pred.value().size();
  if (n == 0) throw ShapeError("mean_sq_error: empty operands");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    acc += d * d;
  }
  return pred.tape()->record(OpTag::MeanSqError, Tensor::scalar(acc / static_cast<double>(n)), {pred, target},
                             [n](BackwardContext& c) {
                               const double g = c.out_grad[0] * 2.0 / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                 const double d = (*c.in_values[0])[i] - (*c.in_values[1])[i];
                                 (*c.in_grads[0])[i] += g * d;
                                 (*c.in_grads[1])[i] -= g * d;
                               }
                             });
}

Var conv2d(Var input, Var kernels, Var bias, std::size_t stride) {
  const Shape& si = input.shape();
  const Shape& sk = kernels.shape();
  if (si.size() != 4 || sk.size() != 4 || si[1] != sk[1]) shape_error("conv2d", si, sk);
  if (bias.shape() != Shape{sk[0]}) shape_error("conv2d", bias.shape(), shape_string(Shape{sk[0]}));
  if (stride == 0 || si[2] < sk[2] || si[3] < sk[3]) shape_error("conv2d", si, sk);
  const std::size_t B = si[0], C = si[1], H = si[2], W = si[3];
  const std::size_t K = sk[0], kh = sk[2], kw = sk[3];
  const std::size_t Ho = (H - kh) / stride + 1, Wo = (W - kw) / stride + 1;

  Tensor out(Shape{B, K, Ho, Wo}, 0.0);
  const auto& x = input.value();
  const auto& w = kernels.value();
  const auto& bv = bias.value();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      double* o = &out[((b * K + k) * Ho) * Wo];
      for (std::size_t i = 0; i < Ho * Wo; ++i) o[i] = bv[k];
      for (std::size_t c = 0; c < C; ++c) {
        const double* xc = x.data().data() + ((b * C + c) * H) * W;
        for (std::size_t u = 0; u < kh; ++u) {
          for (std::size_t v = 0; v < kw; ++v) {
            const double wk = w[((k * C + c) * kh + u) * kw + v];
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              const double* row = xc + (oy * stride + u) * W + v;
              double* orow = o + oy * Wo;
              for (std::size_t ox = 0; ox < Wo; ++ox) orow[ox] += wk * row[ox * stride];
            }
          }
        }
      }
    }
  }
  return input.tape()->record(
      OpTag::Conv2d, std::move(out), {input, kernels, bias},
      [=](BackwardContext& ctx) {
        const Tensor& X = *ctx.in_values[0];
        const Tensor& Wt = *ctx.in_values[1];
        Tensor& dX = *ctx.in_grads[0];
        Tensor& dW = *ctx.in_grads[1];
        Tensor& dB = *ctx.in_grads[2];
        const Tensor& G = ctx.out_grad;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t k = 0; k < K; ++k) {
            const double* g = G.data().data() + ((b * K + k) * Ho) * Wo;
            double gsum = 0.0;
            for (std::size_t i = 0; i < Ho * Wo; ++i) gsum += g[i];
            dB[k] += gsum;
            for (std::size_t c = 0; c < C; ++c) {
              const double* xc = X.data().data() + ((b * C + c) * H) * W;
              double* dxc = &dX[((b * C + c) * H) * W];
              for (std::size_t u = 0; u < kh; ++u) {
                for (std::size_t v = 0; v < kw; ++v) {
                  const std::size_t widx = ((k * C + c) * kh + u) * kw + v;
                  const double wk = Wt[widx];
                  double acc = 0.0;
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::size_t base = (oy * stride + u) * W + v;
                    const double* grow = g + oy * Wo;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                      acc += grow[ox] * xc[base + ox * stride];
                      dxc[base + ox * stride] += grow[ox] * wk;
                    }
                  }
                  dW[widx] += acc;
                }
              }
            }
          }
        }
      });
}

Var max_pool(Var input, std::size_t window) {
  const Shape& si = input.shape();
  if (si.size() != 4) shape_error("max_pool", si, "[B,C,H,W]");
  if (window == 0 || si[2] < window || si[3] < window) shape_error("max_pool", si, "spatial dims >= window");
  const std::size_t B = si[0], C = si[1], H = si[2], W = si[3];
  const std::size_t Ho = H / window, Wo = W / window;
  Tensor out(Shape{B, C, Ho, Wo}, 0.0);
  std::vector<std::size_t> argmax(out.size());
  const auto& x = input.value();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = bc * H * W + (oy * window) * W + ox * window;
        for (std::size_t u = 0; u < window; ++u) {
          for (std::size_t v = 0; v < window; ++v) {
            const std::size_t idx = bc * H * W + (oy * window + u) * W + ox * window + v;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (bc * Ho + oy) * Wo + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return input.tape()->record(OpTag::MaxPool, std::move(out), {input},
                              [argmax = std::move(argmax)](BackwardContext& c) {
                                for (std::size_t o = 0; o < argmax.size(); ++o) {
                                  (*c.in_grads[0])[argmax[o]] += c.out_grad[o];
                                }
                              });
}

Var flatten(Var input) {
  const Shape& si = input.shape();
  if (si.empty()) shape_error("flatten", si, "rank >= 1");
  const std::size_t rows = si[0];
  const std::size_t width = rows == 0 ? 0 : input.value().size() / rows;
  Tensor out(Shape{rows, width}, std::vector<double>(input.value().values()));
  return input.tape()->record(OpTag::Flatten, std::move(out), {input}, [](BackwardContext& c) {
    for (std::size_t i = 0; i < c.out_grad.size(); ++i) (*c.in_grads[0])[i] += c.out_grad[i];
  });
}

Var embedding(Var table, std::span<const int> indices) {
  const Shape& st = table.shape();
  if (st.size() != 2) shape_error("embedding", st, "[cardinality, dim]");
  const std::size_t card = st[0], dim = st[1];
  std::vector<std::size_t> idx(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= card) {
      throw EncodingError("embedding: category index " + std::to_string(indices[i]) +
                          " outside [0," + std::to_string(card) + ")");
    }
    idx[i] = static_cast<std::size_t>(indices[i]);
  }
  Tensor out(Shape{idx.size(), dim}, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(table.value().data().begin() + static_cast<std::ptrdiff_t>(idx[i] * dim), dim,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return table.tape()->record(OpTag::Embedding, std::move(out), {table},
                              [idx = std::move(idx), dim](BackwardContext& c) {
                                for (std::size_t i = 0; i < idx.size(); ++i) {
                                  for (std::size_t j = 0; j < dim; ++j) {
                                    (*c.in_grads[0])[idx[i] * dim + j] += c.out_grad[i * dim + j];
                                  }
                                }
                              });
}

}  // namespace ad
}  // namespace corisk
