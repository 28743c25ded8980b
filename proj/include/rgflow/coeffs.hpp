#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "kernels.hpp"
#include "tensor.hpp"

namespace rgflow {

struct InstabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Largest leg count of a nonvanishing coefficient of order i.
inline int max_legs(int i) { return i == 0 ? 0 : std::min(3 * i, 2 * i + 1); }

/// Coefficients F^{i,m} at one scale for i <= order, m <= max_legs(i).
class CoeffSet {
public:
    CoeffSet(const TorusGrid& g, int order, double mu = 0.0) : grid_(g), order_(order), mu_(mu) {
        for (int i = 0; i <= order; ++i)
            for (int m = 0; m <= max_legs(i); ++m) entries_.emplace(std::make_pair(i, m), CoeffRep(g, m));
    }

    const TorusGrid& grid() const { return grid_; }
    int order() const { return order_; }
    double mu() const { return mu_; }
    void set_mu(double mu) { mu_ = mu; }

    bool stored(int i, int m) const { return i >= 0 && i <= order_ && m >= 0 && m <= max_legs(i); }

    const CoeffRep& at(int i, int m) const {
        auto it = entries_.find({i, m});
        if (it == entries_.end()) throw RepresentationError("coefficient set: index out of range");
        return it->second;
    }
    CoeffRep& at(int i, int m) {
        auto it = entries_.find({i, m});
        if (it == entries_.end()) throw RepresentationError("coefficient set: index out of range");
        return it->second;
    }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    /// The noise coefficient F^{0,0} as a field.
    Field noise() const { return tensor_contract(at(0, 0), std::span<const Field* const>{}); }

private:
    TorusGrid grid_;
    int order_;
    double mu_;
    std::map<std::pair<int, int>, CoeffRep> entries_;
};

/// Coefficient average (a + b) / 2.
inline CoeffRep average(const CoeffRep& a, const CoeffRep& b) {
    CoeffRep r = a;
    r *= 0.5;
    r.axpy(0.5, b);
    return r;
}

/// Counterterms c^{(i)} stored at index i - 1.
inline CoeffSet init_coeffs(const Field& xi_kappa, std::span<const double> counterterms, int order) {
    const TorusGrid& g = xi_kappa.grid();
    CoeffSet s(g, order, 0.0);
    s.at(0, 0) = CoeffRep::local(xi_kappa, 0);
    if (order >= 1) s.at(1, 3) = CoeffRep::delta(g, 3, 1.0);
    for (std::size_t k = 0; k < counterterms.size(); ++k) {
        int i = int(k) + 1;
        if (i > order) throw RepresentationError("init: counterterm order exceeds coefficient order");
        if (counterterms[k] != 0.0) s.at(i, 1).axpy(1.0, CoeffRep::delta(g, 1, counterterms[k]));
    }
    return s;
}

namespace detail {

/// Two-vertex term without legs at the second vertex becomes a one-vertex term.
inline FactoredTerm collapse(const TorusGrid& g, FactoredTerm t) {
    if (t.vertices != 2 || t.second_legs() > 0) return t;
    const std::size_t N = g.sites();
    std::vector<double> c(N);
    for (std::size_t x = 0; x < N; ++x) {
        double s = 0.0;
        for (std::size_t z = 0; z < N; ++z) s += t.core[x * N + z];
        c[x] = s * g.cell();
    }
    t.vertices = 1;
    t.core = std::move(c);
    return t;
}

inline CoeffRep b_map_factored(const GridKernel& Gk, const CoeffRep& W, const CoeffRep& U) {
    const TorusGrid& g = W.grid();
    const std::size_t N = g.sites();
    const int L = W.legs();
    const int k = L - 1;
    const int m = k + U.legs();
    FactoredTerms out;
    if (U.legs() == 0) {
        Field gu = convolve(tensor_contract(U, std::span<const Field* const>{}), Gk);
        for (const auto& t0 : W.factored()) {
            FactoredTerm t = detail::collapse(g, t0);
            if (t.vertices == 1) {
                FactoredTerm r = t;
                r.legs = r.root_legs = k;
                for (std::size_t x = 0; x < N; ++x) r.core[x] *= gu[x];
                out.push_back(std::move(r));
                continue;
            }
            int rl = t.root_legs, sl = t.second_legs();
            if (rl > 0) {
                FactoredTerm r = t;
                r.legs = k;
                r.root_legs = rl - 1;
                r.weight = t.weight * double(rl) / double(L);
                for (std::size_t x = 0; x < N; ++x)
                    for (std::size_t z = 0; z < N; ++z) r.core[x * N + z] *= gu[x];
                out.push_back(std::move(r));
            }
            if (sl > 0) {
                FactoredTerm r = t;
                r.legs = k;
                r.weight = t.weight * double(sl) / double(L);
                for (std::size_t x = 0; x < N; ++x)
                    for (std::size_t z = 0; z < N; ++z) r.core[x * N + z] *= gu[z];
                out.push_back(detail::collapse(g, std::move(r)));
            }
        }
        return CoeffRep(g, m, std::move(out));
    }
    const Field& gd = Gk.density();
    for (const auto& tw0 : W.factored()) {
        FactoredTerm tw = detail::collapse(g, tw0);
        if (tw.vertices != 1) throw UnsupportedDepth();
        for (const auto& tu0 : U.factored()) {
            FactoredTerm tu = detail::collapse(g, tu0);
            if (tu.vertices != 1) throw UnsupportedDepth();
            FactoredTerm r;
            r.vertices = 2;
            r.legs = m;
            r.root_legs = k;
            r.weight = tw.weight * tu.weight;
            r.core.assign(N * N, 0.0);
            for (std::size_t x = 0; x < N; ++x)
                for (std::size_t z = 0; z < N; ++z) r.core[x * N + z] = tw.core[x] * gd[g.diff(x, z)] * tu.core[z];
            out.push_back(std::move(r));
        }
    }
    return CoeffRep(g, m, std::move(out));
}

inline CoeffRep b_map_dense(const GridKernel& Gk, const DenseCoeffTensor& W, const DenseCoeffTensor& U,
                            const DensePolicy& policy) {
    const TorusGrid& g = W.grid();
    const std::size_t N = g.sites();
    const int k = W.legs() - 1, q = U.legs();
    const std::size_t A = ipow(N, k), B = ipow(N, q);
    std::vector<double> V(N * B);
    Field col(g);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t w = 0; w < N; ++w) col[w] = U.data()[w * B + b];
        Field c = convolve(col, Gk);
        for (std::size_t y = 0; y < N; ++y) V[y * B + b] = c[y];
    }
    DenseCoeffTensor T(g, k + q, policy);
    auto& td = T.data();
    const auto& wd = W.data();
    for (std::size_t x = 0; x < N; ++x)
        for (std::size_t y = 0; y < N; ++y)
            for (std::size_t a = 0; a < A; ++a) {
                double wv = wd[(x * N + y) * A + a] * g.cell();
                if (wv == 0.0) continue;
                double* dst = td.data() + (x * A + a) * B;
                const double* src = V.data() + y * B;
                for (std::size_t b = 0; b < B; ++b) dst[b] += wv * src[b];
            }
    T.symmetrize();
    return CoeffRep(std::move(T));
}

}  // namespace detail

/// B(Gk, W, U): first leg of W joined through Gk to the anchor of U, symmetrized.
inline CoeffRep b_map(const GridKernel& Gk, const CoeffRep& W, const CoeffRep& U, const DensePolicy& policy = {}) {
    require_same(Gk.grid(), W.grid());
    require_same(W.grid(), U.grid());
    if (W.legs() < 1) throw RepresentationError("b_map: W needs at least one leg");
    const int m = W.legs() - 1 + U.legs();
    if (W.is_zero() || U.is_zero()) return CoeffRep(W.grid(), m);
    if (!W.is_dense() && !U.is_dense()) {
        auto r = detail::b_map_factored(Gk, W, U);
        r.merge();
        return r;
    }
    return detail::b_map_dense(Gk, W.densify(policy), U.densify(policy), policy);
}

/// -sum_{j,k} (1+k) B(Gk, F^{j,1+k}, F^{i-j,m-k}) for one entry.
inline CoeffRep rhs_entry(const CoeffSet& F, const GridKernel& Gk, int i, int m) {
    CoeffRep acc(F.grid(), m);
    for (int j = 1; j <= i; ++j)
        for (int k = 0; k <= m; ++k) {
            if (!F.stored(j, 1 + k) || !F.stored(i - j, m - k)) continue;
            const auto& W = F.at(j, 1 + k);
            const auto& U = F.at(i - j, m - k);
            if (W.is_zero() || U.is_zero()) continue;
            acc.axpy(-double(1 + k), b_map(Gk, W, U));
        }
    return acc;
}

/// Full right-hand side of the flow for every stored entry with i >= 1.
inline CoeffSet flow_rhs(const CoeffSet& F, const GridKernel& Gk) {
    CoeffSet r(F.grid(), F.order(), F.mu());
    for (int i = 1; i <= F.order(); ++i)
        for (int m = 0; m <= max_legs(i); ++m) r.at(i, m) = rhs_entry(F, Gk, i, m);
    return r;
}

struct FlowOptions {
    double jump_factor = 1e3;
};

/// One midpoint step from node l to l+1. Entries advance in order of
/// increasing i and decreasing m, so the midpoint average of everything an
/// entry depends on is already available.
inline CoeffSet flow_advance(const CoeffSet& F, std::size_t l, const KernelFamily& kf, const FlowOptions& opt = {},
                             CoeffSet* midpoint = nullptr) {
    const auto& Gk = kf.step(l);
    CoeffSet next = F;
    next.set_mu(kf.scales().nodes[l + 1]);
    CoeffSet mid = F;
    mid.set_mu(kf.scales().mid(l));
    for (int i = 1; i <= F.order(); ++i)
        for (int m = max_legs(i); m >= 0; --m) {
            CoeffRep inc = rhs_entry(mid, Gk, i, m);
            if (inc.is_zero()) continue;
            CoeffRep& dst = next.at(i, m);
            double before = vm_norm(dst);
            dst.axpy(1.0, inc);
            double after = vm_norm(dst);
            if (!(after <= opt.jump_factor * std::max(before, 1.0)))
                throw InstabilityError("flow: coefficient norm jump at scale " + std::to_string(next.mu()));
            mid.at(i, m) = average(F.at(i, m), dst);
        }
    if (midpoint) *midpoint = std::move(mid);
    return next;
}

/// Coefficients at every node of the scale grid; frozen beyond mu = 1/2.
class FlowHistory {
public:
    FlowHistory(const Field& xi_kappa, std::span<const double> counterterms, int order, const KernelFamily& kf,
                const FlowOptions& opt = {}) {
        const auto& sg = kf.scales();
        nodes_.push_back(init_coeffs(xi_kappa, counterterms, order));
        for (std::size_t l = 0; l < sg.half; ++l) {
            CoeffSet mid(xi_kappa.grid(), order);
            nodes_.push_back(flow_advance(nodes_.back(), l, kf, opt, &mid));
            mids_.push_back(std::move(mid));
        }
        half_ = sg.half;
        total_ = sg.size();
    }

    std::size_t half() const { return half_; }
    std::size_t size() const { return total_; }
    int order() const { return nodes_.front().order(); }

    const CoeffSet& node(std::size_t l) const { return nodes_[std::min(l, half_)]; }
    /// Coefficients at the midpoint of interval l (frozen set beyond 1/2).
    const CoeffSet& mid(std::size_t l) const { return l < half_ ? mids_[l] : nodes_[half_]; }
    bool frozen(std::size_t l) const { return l >= half_; }

private:
    std::vector<CoeffSet> nodes_;
    std::vector<CoeffSet> mids_;
    std::size_t half_ = 0;
    std::size_t total_ = 0;
};

/// F^{(i)}[phi] = sum_m <F^{i,m}, phi^m>.
inline Field force_order(const CoeffSet& F, int i, const Field& phi) {
    Field out(F.grid());
    for (int m = 0; m <= max_legs(i); ++m) {
        const auto& c = F.at(i, m);
        if (!c.is_zero()) out += contract_power(c, phi);
    }
    return out;
}

/// D F^{(i)}[phi] . psi.
inline Field force_order_derivative(const CoeffSet& F, int i, const Field& phi, const Field& psi) {
    Field out(F.grid());
    for (int m = 1; m <= max_legs(i); ++m) {
        const auto& c = F.at(i, m);
        if (!c.is_zero()) out.axpy(double(m), contract_direction(c, phi, psi));
    }
    return out;
}

/// sum_i lambda^i F^{(i)}[phi].
inline Field contract_force(const CoeffSet& F, double lambda, const Field& phi) {
    Field out(F.grid());
    double p = 1.0;
    for (int i = 0; i <= F.order(); ++i, p *= lambda) {
        if (i > 0 && lambda == 0.0) break;
        out.axpy(p, force_order(F, i, phi));
    }
    return out;
}

/// K_mu * F[K_mu * phi] with K_mu given by its symbol.
inline Field contract_force_dressed(const CoeffSet& F, double lambda, const Field& phi, std::span<const double> K) {
    return apply_symbol(contract_force(F, lambda, apply_symbol(phi, K)), K);
}

/// sum_i lambda^i sum_m <F^{i,m}, args>, heterogeneous argument tuples per leg count.
inline Field contract_force_args(const CoeffSet& F, double lambda,
                                 const std::function<std::vector<const Field*>(int m)>& args) {
    Field out(F.grid());
    double p = 1.0;
    for (int i = 0; i <= F.order(); ++i, p *= lambda)
        for (int m = 0; m <= max_legs(i); ++m) {
            const auto& c = F.at(i, m);
            if (c.is_zero()) continue;
            auto a = args(m);
            out.axpy(p, tensor_contract(c, std::span<const Field* const>(a)));
        }
    return out;
}

inline Field force_derivative(const CoeffSet& F, double lambda, const Field& phi, const Field& psi) {
    Field out(F.grid());
    double p = lambda;
    for (int i = 1; i <= F.order(); ++i, p *= lambda) out.axpy(p, force_order_derivative(F, i, phi, psi));
    return out;
}

/// Contracted remainder sum lambda^{j+j'} DF^{(j)}[phi] . (Gk * F^{(j')}[phi]) over
/// j, j' <= order with j + j' > order; every pair contributes once the flow is frozen.
inline Field h_functional(const CoeffSet& F, double lambda, const Field& phi, const GridKernel& Gk,
                          bool frozen = false) {
    const int n = F.order();
    Field out(F.grid());
    if (lambda == 0.0) return out;
    std::vector<Field> gf;
    for (int j = 0; j <= n; ++j) gf.push_back(convolve(force_order(F, j, phi), Gk));
    for (int j = 1; j <= n; ++j)
        for (int jp = 0; jp <= n; ++jp) {
            if (!frozen && j + jp <= n) continue;
            out.axpy(std::pow(lambda, j + jp), force_order_derivative(F, j, phi, gf[std::size_t(jp)]));
        }
    return out;
}

/// Convolve slot `slot` of a dense tensor with the symbol K.
inline void smooth_slot(DenseCoeffTensor& T, int slot, std::span<const double> K) {
    const TorusGrid& g = T.grid();
    const std::size_t N = g.sites();
    const std::size_t inner = ipow(N, T.legs() - slot);
    const std::size_t outer = T.data().size() / (N * inner);
    Field line(g);
    auto& d = T.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t r = 0; r < inner; ++r) {
            for (std::size_t s = 0; s < N; ++s) line[s] = d[(o * N + s) * inner + r];
            Field c = apply_symbol(line, K);
            for (std::size_t s = 0; s < N; ++s) d[(o * N + s) * inner + r] = c[s];
        }
}

/// ||K^{(1+m)} * F||_{V^m}: exact through a dense expansion for m <= exact_legs,
/// otherwise the per-term triangle bound (|K| * rows) ||K||^m.
inline double smoothed_vm_norm(const CoeffRep& F, std::span<const double> K, int exact_legs = 2) {
    const TorusGrid& g = F.grid();
    if (F.is_zero()) return 0.0;
    if (F.legs() == 0) return apply_symbol(tensor_contract(F, std::span<const Field* const>{}), K).sup_norm();
    if (F.legs() <= exact_legs || F.is_dense()) {
        DenseCoeffTensor T = F.densify();
        for (int s = 0; s <= F.legs(); ++s) smooth_slot(T, s, K);
        return vm_norm(CoeffRep(std::move(T)));
    }
    std::vector<double> ks(K.begin(), K.end());
    auto kk = symbol_kernel(g, ks);
    Field absk(g);
    for (std::size_t s = 0; s < g.sites(); ++s) absk[s] = std::abs(kk.density()[s]);
    auto absK = GridKernel::from_density(std::move(absk));
    double tv = kk.tv_norm();
    Field rows(g, vm_rows(F));
    return convolve(rows, absK).sup_norm() * std::pow(tv, F.legs());
}

}  // namespace rgflow
