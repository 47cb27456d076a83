// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "hopscotch/errors.hpp"

namespace hopscotch {

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw ContractError("invalid graph variable " + std::to_string(v.id));
    }
    return nodes_[v.id];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw ContractError("invalid graph variable " + std::to_string(v.id));
    }
    return nodes_[v.id];
}

template <typename T>
Var Graph<T>::push(std::string op, std::vector<std::int32_t> parents, TensorT value,
                   std::function<void(Graph&, std::int32_t)> backward) {
    Node n;
    n.op = std::move(op);
    n.owned = std::move(value);
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [&](std::int32_t p) { return nodes_[p].requires_grad; });
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::leaf(TensorT value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::constant(const TensorT& value) {
    Node n;
    n.op = "const";
    n.external = &value;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
const BasicTensor<T>& Graph<T>::value(Var v) const {
    return node(v).value();
}

template <typename T>
const BasicTensor<T>* Graph<T>::grad(Var v) const {
    const Node& n = node(v);
    return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
bool Graph<T>::requires_grad(Var v) const {
    return node(v).requires_grad;
}

template <typename T>
BasicTensor<T>& Graph<T>::grad_buffer(std::int32_t id) {
    return nodes_[id].grad;
}

template <typename T>
void Graph<T>::accumulate(std::int32_t id, const TensorT& g) {
    TensorT& dst = nodes_[id].grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

template <typename T>
void Graph<T>::backward(Var root) {
    const Node& r = node(root);
    if (r.value().size() != 1) {
        throw ContractError("backward() needs a scalar root, got " +
                            shape_string(r.value().shape()));
    }
    for (auto& n : nodes_) {
        if (n.requires_grad) {
            if (!n.has_grad || n.grad.shape() != n.value().shape()) n.grad = TensorT(n.value().shape());
            else n.grad.fill(T(0));
            n.has_grad = true;
        }
    }
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad[0] = T(1);
    for (std::int32_t i = root.id; i >= 0; --i) {
        if (nodes_[i].requires_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
    }
}

// ---------------------------------------------------------------------------

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
    TensorT out = hopscotch::matmul(value(a), value(b));
    return push("matmul", {a.id, b.id}, std::move(out), [](Graph& g, std::int32_t self) {
        const auto ia = g.nodes_[self].parents[0];
        const auto ib = g.nodes_[self].parents[1];
        const TensorT& gy = g.nodes_[self].grad;
        if (g.wants(ia)) g.accumulate(ia, matmul_nt(gy, g.nodes_[ib].value()));
        if (g.wants(ib)) g.accumulate(ib, matmul_tn(g.nodes_[ia].value(), gy));
    });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
    const TensorT& x = value(a);
    const TensorT& y = value(b);
    if (x.shape() != y.shape()) {
        throw DimensionError("add shapes differ: " + shape_string(x.shape()) + " vs " +
                             shape_string(y.shape()));
    }
    TensorT out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return push("add", {a.id, b.id}, std::move(out), [](Graph& g, std::int32_t self) {
        const TensorT& gy = g.nodes_[self].grad;
        for (auto p : g.nodes_[self].parents)
            if (g.wants(p)) g.accumulate(p, gy);
    });
}

template <typename T>
Var Graph<T>::scale(Var x, Var s) {
    const TensorT& xv = value(x);
    const T sv = value(s).item();
    TensorT out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * xv[i];
    return push("scale", {x.id, s.id}, std::move(out), [](Graph& g, std::int32_t self) {
        const auto ix = g.nodes_[self].parents[0];
        const auto is = g.nodes_[self].parents[1];
        const TensorT& gy = g.nodes_[self].grad;
        const TensorT& xv = g.nodes_[ix].value();
        if (g.wants(ix)) {
            const T sv = g.nodes_[is].value()[0];
            TensorT& gx = g.grad_buffer(ix);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += sv * gy[i];
        }
        if (g.wants(is)) {
            T acc = 0;
            for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xv[i];
            g.grad_buffer(is)[0] += acc;
        }
    });
}

template <typename T>
Var Graph<T>::rms_norm(Var x, Var gain, double eps) {
    TensorT out = hopscotch::rms_norm(value(x), value(gain), eps);
    return push("rms_norm", {x.id, gain.id}, std::move(out), [eps](Graph& g, std::int32_t self) {
        const auto ix = g.nodes_[self].parents[0];
        const auto ig = g.nodes_[self].parents[1];
        const TensorT& gy = g.nodes_[self].grad;
        const TensorT& xv = g.nodes_[ix].value();
        const TensorT& gv = g.nodes_[ig].value();
        const std::size_t d = xv.cols();
        const bool want_x = g.wants(ix), want_g = g.wants(ig);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            const T* xr = xv.data() + r * d;
            const T* dy = gy.data() + r * d;
            T ss = 0;
            for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
            const T inv = T(1) / std::sqrt(ss / T(d) + T(eps));
            if (want_g) {
                T* dg = g.grad_buffer(ig).data();
                for (std::size_t j = 0; j < d; ++j) dg[j] += dy[j] * xr[j] * inv;
            }
            if (want_x) {
                T dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += dy[j] * gv[j] * xr[j];
                const T coef = dot * inv * inv * inv / T(d);
                T* dx = g.grad_buffer(ix).data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dx[j] += inv * gv[j] * dy[j] - xr[j] * coef;
            }
        }
    });
}

template <typename T>
Var Graph<T>::silu(Var x) {
    TensorT out = hopscotch::silu(value(x));
    return push("silu", {x.id}, std::move(out), [](Graph& g, std::int32_t self) {
        const auto ix = g.nodes_[self].parents[0];
        const TensorT& gy = g.nodes_[self].grad;
        const TensorT& xv = g.nodes_[ix].value();
        TensorT& gx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-xv[i]));
            gx[i] += gy[i] * s * (T(1) + xv[i] * (T(1) - s));
        }
    });
}

template <typename T>
Var Graph<T>::softmax_rows(Var x) {
    TensorT out = hopscotch::softmax_rows(value(x));
    return push("softmax_rows", {x.id}, std::move(out), [](Graph& g, std::int32_t self) {
        const auto ix = g.nodes_[self].parents[0];
        const TensorT& gy = g.nodes_[self].grad;
        const TensorT& y = g.nodes_[self].value();
        TensorT& gx = g.grad_buffer(ix);
        const std::size_t n = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += gy[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (gy[r * n + j] - dot);
        }
    });
}

template <typename T>
Var Graph<T>::embedding(Var table, std::span<const int> ids) {
    const TensorT& tv = value(table);
    if (tv.rank() != 2) throw DimensionError("embedding table must be a matrix");
    const std::size_t d = tv.cols();
    TensorT out({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        if (id < 0 || static_cast<std::size_t>(id) >= tv.rows()) {
            throw IndexError("embedding index " + std::to_string(id) + " outside [0," +
                             std::to_string(tv.rows()) + ")");
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, out.data() + r * d);
    }
    std::vector<int> idx(ids.begin(), ids.end());
    return push("embedding", {table.id}, std::move(out),
                [idx = std::move(idx)](Graph& g, std::int32_t self) {
                    const auto it = g.nodes_[self].parents[0];
                    const TensorT& gy = g.nodes_[self].grad;
                    TensorT& gt = g.grad_buffer(it);
                    const std::size_t d = gy.cols();
                    for (std::size_t r = 0; r < idx.size(); ++r) {
                        T* dst = gt.data() + static_cast<std::size_t>(idx[r]) * d;
                        const T* src = gy.data() + r * d;
                        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                });
}

template <typename T>
Var Graph<T>::causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq,
                               std::size_t heads) {
    const TensorT& qv = value(q);
    const TensorT& kv = value(k);
    const TensorT& vv = value(v);
    if (qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.rank() != 2 ||
        qv.rows() != batch * seq || heads == 0 || qv.cols() % heads != 0) {
        throw DimensionError("causal_attention: q " + shape_string(qv.shape()) + ", k " +
                             shape_string(kv.shape()) + ", v " + shape_string(vv.shape()) +
                             " for batch " + std::to_string(batch) + " x seq " +
                             std::to_string(seq) + " with " + std::to_string(heads) + " heads");
    }
    const std::size_t d = qv.cols(), hd = d / heads;
    const T scale = T(1) / std::sqrt(T(hd));
    // probs[(b*heads + h)*seq*seq + t*seq + s], zero above the diagonal
    std::vector<T> probs(batch * heads * seq * seq, T(0));
    TensorT out({batch * seq, d});
    std::vector<T> row(seq);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            T* pb = probs.data() + (b * heads + h) * seq * seq;
            for (std::size_t t = 0; t < seq; ++t) {
                const T* qt = qv.data() + (b * seq + t) * d + h * hd;
                T mx = 0;
                for (std::size_t s = 0; s <= t; ++s) {
                    const T* ks = kv.data() + (b * seq + s) * d + h * hd;
                    T dot = 0;
                    for (std::size_t j = 0; j < hd; ++j) dot += qt[j] * ks[j];
                    row[s] = dot * scale;
                    mx = s == 0 ? row[s] : std::max(mx, row[s]);
                }
                T sum = 0;
                for (std::size_t s = 0; s <= t; ++s) {
                    row[s] = std::exp(row[s] - mx);
                    sum += row[s];
                }
                const T inv = T(1) / sum;
                T* ot = out.data() + (b * seq + t) * d + h * hd;
                for (std::size_t s = 0; s <= t; ++s) {
                    const T p = row[s] * inv;
                    pb[t * seq + s] = p;
                    const T* vs = vv.data() + (b * seq + s) * d + h * hd;
                    for (std::size_t j = 0; j < hd; ++j) ot[j] += p * vs[j];
                }
            }
        }
    }
    return push(
        "causal_attention", {q.id, k.id, v.id}, std::move(out),
        [probs = std::move(probs), batch, seq, heads, scale](Graph& g, std::int32_t self) {
            const auto iq = g.nodes_[self].parents[0];
            const auto ik = g.nodes_[self].parents[1];
            const auto iv = g.nodes_[self].parents[2];
            const TensorT& gy = g.nodes_[self].grad;
            const TensorT& qv = g.nodes_[iq].value();
            const TensorT& kv = g.nodes_[ik].value();
            const TensorT& vv = g.nodes_[iv].value();
            const bool wq = g.wants(iq), wk = g.wants(ik), wv = g.wants(iv);
            T* dq = wq ? g.grad_buffer(iq).data() : nullptr;
            T* dk = wk ? g.grad_buffer(ik).data() : nullptr;
            T* dv = wv ? g.grad_buffer(iv).data() : nullptr;
            const std::size_t d = qv.cols(), hd = d / heads;
            std::vector<T> dp(seq);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const T* pb = probs.data() + (b * heads + h) * seq * seq;
                    for (std::size_t t = 0; t < seq; ++t) {
                        const T* go = gy.data() + (b * seq + t) * d + h * hd;
                        T weighted = 0;
                        for (std::size_t s = 0; s <= t; ++s) {
                            const T* vs = vv.data() + (b * seq + s) * d + h * hd;
                            T dot = 0;
                            for (std::size_t j = 0; j < hd; ++j) dot += go[j] * vs[j];
                            dp[s] = dot;
                            weighted += pb[t * seq + s] * dot;
                            if (dv) {
                                T* dvs = dv + (b * seq + s) * d + h * hd;
                                const T p = pb[t * seq + s];
                                for (std::size_t j = 0; j < hd; ++j) dvs[j] += p * go[j];
                            }
                        }
                        if (!dq && !dk) continue;
                        const T* qt = qv.data() + (b * seq + t) * d + h * hd;
                        for (std::size_t s = 0; s <= t; ++s) {
                            const T ds = pb[t * seq + s] * (dp[s] - weighted) * scale;
                            const T* ks = kv.data() + (b * seq + s) * d + h * hd;
                            if (dq) {
                                T* dqt = dq + (b * seq + t) * d + h * hd;
                                for (std::size_t j = 0; j < hd; ++j) dqt[j] += ds * ks[j];
                            }
                            if (dk) {
                                T* dks = dk + (b * seq + s) * d + h * hd;
                                for (std::size_t j = 0; j < hd; ++j) dks[j] += ds * qt[j];
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
Var Graph<T>::weighted_nll(Var logits, std::span<const int> targets,
                           std::span<const double> weights) {
    const TensorT& lv = value(logits);
    if (lv.rank() != 2 || targets.size() != lv.rows() || weights.size() != lv.rows()) {
        throw DimensionError("weighted_nll: logits " + shape_string(lv.shape()) + " with " +
                             std::to_string(targets.size()) + " targets and " +
                             std::to_string(weights.size()) + " weights");
    }
    const std::size_t vocab = lv.cols();
    double total = 0.0;
    for (std::size_t r = 0; r < lv.rows(); ++r) {
        if (weights[r] == 0.0) continue;
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw IndexError("target " + std::to_string(t) + " outside [0," +
                             std::to_string(vocab) + ")");
        }
        const T* in = lv.data() + r * vocab;
        T mx = in[0];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(in[j] - mx);
        total += weights[r] * static_cast<double>(std::log(sum) + mx - in[t]);
    }
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<double> wt(weights.begin(), weights.end());
    return push("weighted_nll", {logits.id}, TensorT::scalar(static_cast<T>(total)),
                [tg = std::move(tg), wt = std::move(wt)](Graph& g, std::int32_t self) {
                    const auto il = g.nodes_[self].parents[0];
                    const T gy = g.nodes_[self].grad[0];
                    const TensorT& lv = g.nodes_[il].value();
                    TensorT& gl = g.grad_buffer(il);
                    const std::size_t vocab = lv.cols();
                    for (std::size_t r = 0; r < lv.rows(); ++r) {
                        if (wt[r] == 0.0) continue;
                        const T* in = lv.data() + r * vocab;
                        T* out = gl.data() + r * vocab;
                        T mx = in[0];
                        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, in[j]);
                        T sum = 0;
                        for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(in[j] - mx);
                        const T w = static_cast<T>(wt[r]) * gy;
                        for (std::size_t j = 0; j < vocab; ++j) out[j] += w * std::exp(in[j] - mx) / sum;
                        out[tg[r]] -= w;
                    }
                });
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> targets,
                            std::span<const std::uint8_t> mask) {
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    std::vector<double> weights(mask.size(), 0.0);
    if (count)
        for (std::size_t i = 0; i < mask.size(); ++i) weights[i] = mask[i] ? 1.0 / double(count) : 0.0;
    return weighted_nll(logits, targets, weights);
}

template <typename T>
Var Graph<T>::masked_sq_dist(Var h, const TensorT& ref, std::span<const std::uint8_t> mask) {
    const TensorT& hv = value(h);
    if (hv.shape() != ref.shape() || hv.rank() != 2 || mask.size() != hv.rows()) {
        throw DimensionError("hidden state " + shape_string(hv.shape()) + " vs reference " +
                             shape_string(ref.shape()) + " with " + std::to_string(mask.size()) +
                             " mask bits");
    }
    const std::size_t d = hv.cols();
    std::size_t count = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < hv.rows(); ++r) {
        if (!mask[r]) continue;
        ++count;
        T acc = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const T diff = hv[r * d + j] - ref[r * d + j];
            acc += diff * diff;
        }
        total += static_cast<double>(acc);
    }
    const double mean = count ? total / double(count) : 0.0;
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    return push("masked_sq_dist", {h.id}, TensorT::scalar(static_cast<T>(mean)),
                [ref, m = std::move(m), count](Graph& g, std::int32_t self) {
                    if (!count) return;
                    const auto ih = g.nodes_[self].parents[0];
                    const T gy = g.nodes_[self].grad[0];
                    const TensorT& hv = g.nodes_[ih].value();
                    TensorT& gh = g.grad_buffer(ih);
                    const std::size_t d = hv.cols();
                    const T c = T(2) * gy / T(count);
                    for (std::size_t r = 0; r < hv.rows(); ++r) {
                        if (!m[r]) continue;
                        for (std::size_t j = 0; j < d; ++j)
                            gh[r * d + j] += c * (hv[r * d + j] - ref[r * d + j]);
                    }
                });
}

template class Graph<float>;
template class Graph<double>;

}  // namespace hopscotch
