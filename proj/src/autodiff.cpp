#include "mmdm/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace mmdm::ad {

namespace {

constexpr double kLnVarEps = 1e-8;

// strides of `shape` right-aligned against an output of rank `out_rank`;
// zero stride where the dimension is broadcast
std::vector<int64_t> aligned_strides(const std::vector<int>& shape, int out_rank,
                                     const std::vector<int>& out_shape) {
  std::vector<int64_t> strides(static_cast<size_t>(out_rank), 0);
  int64_t s = 1;
  int off = out_rank - static_cast<int>(shape.size());
  for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
    if (shape[d] == out_shape[d + off]) {
      strides[d + off] = s;
    } else if (shape[d] == 1) {
      strides[d + off] = 0;
    } else {
      throw ShapeMismatch("shapes not broadcastable");
    }
    s *= shape[d];
  }
  return strides;
}

// odometer loop over out_shape pushing linear offsets for two aligned inputs
template <typename Fn>
void for_each_bcast2(const std::vector<int>& out_shape, const std::vector<int64_t>& sa,
                     const std::vector<int64_t>& sb, Fn&& fn) {
  const int rank = static_cast<int>(out_shape.size());
  int64_t n = 1;
  for (int d : out_shape) n *= d;
  std::vector<int> idx(static_cast<size_t>(rank), 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out_shape[d]) break;
      ia -= sa[d] * out_shape[d];
      ib -= sb[d] * out_shape[d];
      idx[d] = 0;
    }
  }
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const Var& in : n->inputs) {
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

Var binary_op(const Var& a, const Var& b, double (*fwd)(double, double),
              void (*bwd)(double g, double av, double bv, double& ga, double& gb)) {
  const auto out_shape = broadcast_shape(a->value.shape(), b->value.shape());
  const int rank = static_cast<int>(out_shape.size());
  const auto sa = aligned_strides(a->value.shape(), rank, out_shape);
  const auto sb = aligned_strides(b->value.shape(), rank, out_shape);
  Tensor out(out_shape);
  const double* ap = a->value.data();
  const double* bp = b->value.data();
  double* op = out.data();
  for_each_bcast2(out_shape, sa, sb,
                  [&](int64_t o, int64_t ia, int64_t ib) { op[o] = fwd(ap[ia], bp[ib]); });
  return make_node(std::move(out), {a, b}, [out_shape, sa, sb, fwd, bwd](Node& n) {
    Var a = n.inputs[0];
    Var b = n.inputs[1];
    Tensor ga(a->value.shape());
    Tensor gb(b->value.shape());
    const double* gp = n.grad.data();
    const double* ap = a->value.data();
    const double* bp = b->value.data();
    double* gap = ga.data();
    double* gbp = gb.data();
    for_each_bcast2(out_shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
      bwd(gp[o], ap[ia], bp[ib], gap[ia], gbp[ib]);
    });
    if (a->requires_grad) a->accumulate(ga);
    if (b->requires_grad) b->accumulate(gb);
  });
}

Var unary_op(const Var& a, double (*fwd)(double), double (*deriv)(double)) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = fwd(a->value[i]);
  return make_node(std::move(out), {a}, [deriv](Node& n) {
    Var a = n.inputs[0];
    Tensor ga(a->value.shape());
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] = n.grad[i] * deriv(a->value[i]);
    a->accumulate(ga);
  });
}

void axis_split(const std::vector<int>& shape, int axis, int64_t& outer, int64_t& len,
                int64_t& inner) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeMismatch("axis out of range");
  outer = 1;
  inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  len = shape[axis];
  for (int d = axis + 1; d < static_cast<int>(shape.size()); ++d) inner *= shape[d];
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (!g.same_shape(value)) throw ShapeMismatch("gradient shape mismatch");
  if (!grad_ready) {
    grad = g;
    grad_ready = true;
  } else {
    for (int64_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
}

Var leaf(Tensor value, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }
Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b) {
  const int rank = std::max(static_cast<int>(a.size()), static_cast<int>(b.size()));
  std::vector<int> out(static_cast<size_t>(rank), 1);
  for (int d = 0; d < rank; ++d) {
    const int ad = d < rank - static_cast<int>(a.size()) ? 1 : a[d - (rank - a.size())];
    const int bd = d < rank - static_cast<int>(b.size()) ? 1 : b[d - (rank - b.size())];
    if (ad != bd && ad != 1 && bd != 1) throw ShapeMismatch("shapes not broadcastable");
    out[d] = std::max(ad, bd);
  }
  return out;
}

Var add(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double& ga, double& gb) {
        ga += g;
        gb += g;
      });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double& ga, double& gb) {
        ga += g;
        gb -= g;
      });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double g, double av, double bv, double& ga, double& gb) {
        ga += g * bv;
        gb += g * av;
      });
}

Var neg(const Var& a) {
  return unary_op(
      a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Var scale(const Var& a, double s) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
  return make_node(std::move(out), {a}, [s](Node& n) {
    Var a = n.inputs[0];
    Tensor ga(a->value.shape());
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] = n.grad[i] * s;
    a->accumulate(ga);
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + s;
  return make_node(std::move(out), {a}, [](Node& n) { n.inputs[0]->accumulate(n.grad); });
}

Var gelu(const Var& a) {
  return unary_op(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); },
      [](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779399461;
        return cdf + x * pdf;
      });
}

Var matmul(const Var& a, const Var& b) {
  const auto& sa = a->value.shape();
  const auto& sb = b->value.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeMismatch("matmul requires rank >= 2");
  const int m = sa[sa.size() - 2];
  const int k = sa[sa.size() - 1];
  const int k2 = sb[sb.size() - 2];
  const int n = sb[sb.size() - 1];
  if (k != k2) throw ShapeMismatch("matmul inner dimensions disagree");

  const std::vector<int> batch_a(sa.begin(), sa.end() - 2);
  const std::vector<int> batch_b(sb.begin(), sb.end() - 2);
  const std::vector<int> batch = broadcast_shape(batch_a, batch_b);
  std::vector<int> out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  const int brank = static_cast<int>(batch.size());
  const auto stra = aligned_strides(batch_a, brank, batch);
  const auto strb = aligned_strides(batch_b, brank, batch);

  Tensor out(out_shape);
  const double* ap = a->value.data();
  const double* bp = b->value.data();
  double* op = out.data();
  const int64_t a_mat = static_cast<int64_t>(m) * k;
  const int64_t b_mat = static_cast<int64_t>(k) * n;
  const int64_t o_mat = static_cast<int64_t>(m) * n;

  for_each_bcast2(batch, stra, strb, [&](int64_t ob, int64_t iab, int64_t ibb) {
    const double* A = ap + iab * a_mat;
    const double* B = bp + ibb * b_mat;
    double* C = op + ob * o_mat;
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        const double* brow = B + p * n;
        double* crow = C + i * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });

  return make_node(std::move(out), {a, b}, [=](Node& node) {
    Var a = node.inputs[0];
    Var b = node.inputs[1];
    Tensor ga(a->value.shape());
    Tensor gb(b->value.shape());
    const double* ap = a->value.data();
    const double* bp = b->value.data();
    const double* gp = node.grad.data();
    double* gap = ga.data();
    double* gbp = gb.data();
    for_each_bcast2(batch, stra, strb, [&](int64_t ob, int64_t iab, int64_t ibb) {
      const double* A = ap + iab * a_mat;
      const double* B = bp + ibb * b_mat;
      const double* G = gp + ob * o_mat;
      double* GA = gap + iab * a_mat;
      double* GB = gbp + ibb * b_mat;
      // dA = G * B^T, dB = A^T * G; broadcast batches accumulate
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          if (g == 0.0) continue;
          const double* brow = B + j;  // column j
          for (int p = 0; p < k; ++p) GA[i * k + p] += g * brow[p * n];
        }
      }
      for (int p = 0; p < k; ++p) {
        for (int i = 0; i < m; ++i) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          const double* grow = G + i * n;
          double* gbrow = GB + p * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    });
    if (a->requires_grad) a->accumulate(ga);
    if (b->requires_grad) b->accumulate(gb);
  });
}

Var permute(const Var& a, const std::vector<int>& perm) {
  const auto& shape = a->value.shape();
  const int rank = static_cast<int>(shape.size());
  if (static_cast<int>(perm.size()) != rank) throw ShapeMismatch("permute rank mismatch");
  std::vector<int> seen(static_cast<size_t>(rank), 0);
  std::vector<int> out_shape(static_cast<size_t>(rank));
  for (int d = 0; d < rank; ++d) {
    if (perm[d] < 0 || perm[d] >= rank || seen[perm[d]]++) throw ShapeMismatch("bad permutation");
    out_shape[d] = shape[perm[d]];
  }
  // input strides arranged in output axis order
  std::vector<int64_t> in_strides(static_cast<size_t>(rank), 1);
  for (int d = rank - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * shape[d + 1];
  std::vector<int64_t> strides(static_cast<size_t>(rank));
  for (int d = 0; d < rank; ++d) strides[d] = in_strides[perm[d]];

  Tensor out(out_shape);
  std::vector<int> idx(static_cast<size_t>(rank), 0);
  int64_t ii = 0;
  for (int64_t o = 0; o < out.size(); ++o) {
    out[o] = a->value[ii];
    for (int d = rank - 1; d >= 0; --d) {
      idx[d]++;
      ii += strides[d];
      if (idx[d] < out_shape[d]) break;
      ii -= strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return make_node(std::move(out), {a}, [out_shape, strides, rank](Node& n) {
    Var a = n.inputs[0];
    Tensor ga(a->value.shape());
    std::vector<int> idx(static_cast<size_t>(rank), 0);
    int64_t ii = 0;
    for (int64_t o = 0; o < n.grad.size(); ++o) {
      ga[ii] += n.grad[o];
      for (int d = rank - 1; d >= 0; --d) {
        idx[d]++;
        ii += strides[d];
        if (idx[d] < out_shape[d]) break;
        ii -= strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
    a->accumulate(ga);
  });
}

Var transpose(const Var& a) {
  const int rank = a->value.rank();
  if (rank < 2) throw ShapeMismatch("transpose requires rank >= 2");
  std::vector<int> perm(static_cast<size_t>(rank));
  for (int d = 0; d < rank; ++d) perm[d] = d;
  std::swap(perm[rank - 1], perm[rank - 2]);
  return permute(a, perm);
}

Var reshape(const Var& a, std::vector<int> shape) {
  Tensor out(std::move(shape), a->value.vec());
  const auto in_shape = a->value.shape();
  return make_node(std::move(out), {a}, [in_shape](Node& n) {
    n.inputs[0]->accumulate(Tensor(in_shape, n.grad.vec()));
  });
}

Var slice(const Var& a, int axis, int start, int len) {
  int64_t outer, alen, inner;
  axis_split(a->value.shape(), axis, outer, alen, inner);
  if (start < 0 || len <= 0 || start + len > alen) throw ShapeMismatch("slice out of range");
  std::vector<int> out_shape = a->value.shape();
  out_shape[axis] = len;
  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < len; ++l)
      for (int64_t i = 0; i < inner; ++i)
        out[(o * len + l) * inner + i] = a->value[(o * alen + start + l) * inner + i];
  return make_node(std::move(out), {a}, [=](Node& n) {
    Var a = n.inputs[0];
    Tensor ga(a->value.shape());
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t l = 0; l < len; ++l)
        for (int64_t i = 0; i < inner; ++i)
          ga[(o * alen + start + l) * inner + i] += n.grad[(o * len + l) * inner + i];
    a->accumulate(ga);
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  std::vector<int> out_shape = parts[0]->value.shape();
  if (axis < 0 || axis >= static_cast<int>(out_shape.size()))
    throw ShapeMismatch("axis out of range");
  int total = 0;
  std::vector<int64_t> lens;
  for (const Var& p : parts) {
    auto s = p->value.shape();
    if (static_cast<int>(s.size()) != static_cast<int>(out_shape.size()))
      throw ShapeMismatch("concat rank mismatch");
    for (size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != out_shape[d])
        throw ShapeMismatch("concat shapes differ off-axis");
    lens.push_back(s[axis]);
    total += s[axis];
  }
  out_shape[axis] = total;
  int64_t outer, alen, inner;
  axis_split(out_shape, axis, outer, alen, inner);
  Tensor out(out_shape);
  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& v = parts[pi]->value;
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t l = 0; l < lens[pi]; ++l)
        for (int64_t i = 0; i < inner; ++i)
          out[(o * alen + off + l) * inner + i] = v[(o * lens[pi] + l) * inner + i];
    off += lens[pi];
  }
  return make_node(std::move(out), parts, [=](Node& n) {
    int64_t off = 0;
    for (size_t pi = 0; pi < n.inputs.size(); ++pi) {
      Var p = n.inputs[pi];
      if (p->requires_grad) {
        Tensor gp(p->value.shape());
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t l = 0; l < lens[pi]; ++l)
            for (int64_t i = 0; i < inner; ++i)
              gp[(o * lens[pi] + l) * inner + i] = n.grad[(o * alen + off + l) * inner + i];
        p->accumulate(gp);
      }
      off += lens[pi];
    }
  });
}

Var softmax(const Var& a, int axis) {
  int64_t outer, len, inner;
  axis_split(a->value.shape(), axis, outer, len, inner);
  Tensor out(a->value.shape());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      double mx = -HUGE_VAL;
      for (int64_t l = 0; l < len; ++l) mx = std::max(mx, a->value[(o * len + l) * inner + i]);
      double z = 0.0;
      for (int64_t l = 0; l < len; ++l) {
        const double e = std::exp(a->value[(o * len + l) * inner + i] - mx);
        out[(o * len + l) * inner + i] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (int64_t l = 0; l < len; ++l) out[(o * len + l) * inner + i] *= inv;
    }
  }
  return make_node(std::move(out), {a}, [=](Node& n) {
    Var a = n.inputs[0];
    Tensor ga(a->value.shape());
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t i = 0; i < inner; ++i) {
        double dot = 0.0;
        for (int64_t l = 0; l < len; ++l) {
          const int64_t off = (o * len + l) * inner + i;
          dot += n.grad[off] * n.value[off];
        }
        for (int64_t l = 0; l < len; ++l) {
          const int64_t off = (o * len + l) * inner + i;
          ga[off] = n.value[off] * (n.grad[off] - dot);
        }
      }
    }
    a->accumulate(ga);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const auto& shape = x->value.shape();
  const int D = shape.back();
  if (gain->value.rank() != 1 || gain->value.dim(0) != D || bias->value.rank() != 1 ||
      bias->value.dim(0) != D)
    throw ShapeMismatch("layer_norm gain/bias must match last axis");
  const int64_t rows = x->value.size() / D;
  Tensor out(shape);
  auto xhat = std::make_shared<Tensor>(shape);
  auto denom = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  auto degenerate = std::make_shared<std::vector<char>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xp = x->value.data() + r * D;
    double m = 0.0;
    for (int d = 0; d < D; ++d) m += xp[d];
    m /= D;
    double var = 0.0;
    for (int d = 0; d < D; ++d) var += (xp[d] - m) * (xp[d] - m);
    var /= D;
    // degenerate-variance rows are pinned to the epsilon denominator
    const bool degen = var < kLnVarEps;
    const double den = std::sqrt(degen ? kLnVarEps : var);
    (*denom)[r] = den;
    (*degenerate)[r] = degen ? 1 : 0;
    for (int d = 0; d < D; ++d) {
      const double xh = (xp[d] - m) / den;
      (*xhat)[r * D + d] = xh;
      out[r * D + d] = gain->value[d] * xh + bias->value[d];
    }
  }
  return make_node(std::move(out), {x, gain, bias}, [=](Node& n) {
    Var x = n.inputs[0];
    Var gain = n.inputs[1];
    Var bias = n.inputs[2];
    Tensor gx(x->value.shape());
    Tensor gg(gain->value.shape());
    Tensor gb(bias->value.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const double den = (*denom)[r];
      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
      for (int d = 0; d < D; ++d) {
        const int64_t off = r * D + d;
        const double dxh = n.grad[off] * gain->value[d];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * (*xhat)[off];
        gg[d] += n.grad[off] * (*xhat)[off];
        gb[d] += n.grad[off];
      }
      mean_dxh /= D;
      mean_dxh_xh /= D;
      for (int d = 0; d < D; ++d) {
        const int64_t off = r * D + d;
        const double dxh = n.grad[off] * gain->value[d];
        double g = dxh - mean_dxh;
        if (!(*degenerate)[r]) g -= (*xhat)[off] * mean_dxh_xh;
        gx[off] = g / den;
      }
    }
    if (x->requires_grad) x->accumulate(gx);
    if (gain->requires_grad) gain->accumulate(gg);
    if (bias->requires_grad) bias->accumulate(gb);
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_node(Tensor::scalar(s), {a}, [](Node& n) {
    Var a = n.inputs[0];
    Tensor ga = Tensor::full(a->value.shape(), n.grad[0]);
    a->accumulate(ga);
  });
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.size());
  double s = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_node(Tensor::scalar(s * inv), {a}, [inv](Node& n) {
    Var a = n.inputs[0];
    Tensor ga = Tensor::full(a->value.shape(), n.grad[0] * inv);
    a->accumulate(ga);
  });
}

const Tensor& GradientMap::at(const Var& leaf) const {
  auto it = grads_.find(leaf.get());
  if (it == grads_.end())
    throw DomainError("detached leaf: no gradient reached '" + leaf->name + "'");
  return it->second;
}

bool GradientMap::contains(const Var& leaf) const { return grads_.count(leaf.get()) > 0; }

void GradientMap::put(const Node* node, Tensor grad) { grads_[node] = std::move(grad); }

GradientMap backward(const Var& loss) {
  if (!loss->value.is_scalar()) throw DomainError("not scalar: backward needs a scalar loss");

  // iterative post-order topological sort over grad-requiring nodes
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state;  // 0 new, 1 open, 2 done
  std::vector<Node*> stack{loss.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    int& st = state[n];
    if (st == 0) {
      st = 1;
      for (const Var& in : n->inputs)
        if (in->requires_grad && state[in.get()] == 0) stack.push_back(in.get());
    } else {
      stack.pop_back();
      if (st == 1) {
        st = 2;
        order.push_back(n);
      }
    }
  }

  for (Node* n : order) {
    n->grad_ready = false;
    n->grad = Tensor();
  }
  loss->accumulate(Tensor::scalar(1.0));

  GradientMap result;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->grad_ready) continue;
    if (n->backprop) {
      n->backprop(*n);
    } else if (n->requires_grad) {
      result.put(n, n->grad);
    }
  }
  return result;
}

}  // namespace mmdm::ad
