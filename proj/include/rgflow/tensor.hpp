#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "grid.hpp"

namespace rgflow {

struct RepresentationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a grafted tree would need more than two vertices.
struct UnsupportedDepth : std::runtime_error {
    UnsupportedDepth() : std::runtime_error("unsupported depth: factored term needs more than two vertices") {}
    explicit UnsupportedDepth(const std::string& what) : std::runtime_error(what) {}
};

struct DensePolicy {
    int max_legs = 3;
    std::size_t max_values = std::size_t(1) << 31;
};

inline std::size_t ipow(std::size_t b, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

inline double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
    return r;
}

/// Kernel V(x; y1..ym) on (1+m) site indices, anchor-major layout.
class DenseCoeffTensor {
public:
    DenseCoeffTensor(const TorusGrid& g, int legs, const DensePolicy& policy = {})
        : grid_(g), legs_(legs) {
        if (legs < 0) throw RepresentationError("dense tensor: negative leg count");
        if (legs > policy.max_legs) throw RepresentationError("dense tensor: too many legs for dense backend");
        std::size_t count = ipow(g.sites(), 1 + legs);
        if (count > policy.max_values) throw RepresentationError("dense tensor: memory cap exceeded");
        data_.assign(count, 0.0);
    }

    const TorusGrid& grid() const { return grid_; }
    int legs() const { return legs_; }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    bool symmetric() const { return symmetric_; }
    void set_symmetric(bool s) { symmetric_ = s; }

    std::size_t offset(std::size_t x, std::span<const std::size_t> ys) const {
        std::size_t o = x;
        for (std::size_t y : ys) o = o * grid_.sites() + y;
        return o;
    }
    double& at(std::size_t x, std::span<const std::size_t> ys) { return data_[offset(x, ys)]; }
    double at(std::size_t x, std::span<const std::size_t> ys) const { return data_[offset(x, ys)]; }

    DenseCoeffTensor& operator+=(const DenseCoeffTensor& o) {
        require_same(grid_, o.grid_);
        if (legs_ != o.legs_) throw RepresentationError("dense tensor: leg mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        symmetric_ = symmetric_ && o.symmetric_;
        return *this;
    }

    DenseCoeffTensor& operator*=(double c) {
        for (double& v : data_) v *= c;
        return *this;
    }

    /// Average over all permutations of the trailing legs.
    void symmetrize() {
        if (legs_ <= 1) {
            symmetric_ = true;
            return;
        }
        std::vector<int> perm(static_cast<std::size_t>(legs_));
        std::iota(perm.begin(), perm.end(), 0);
        std::vector<double> out(data_.size(), 0.0);
        std::vector<std::size_t> ys(static_cast<std::size_t>(legs_)), ps(static_cast<std::size_t>(legs_));
        double count = 0.0;
        const std::size_t N = grid_.sites(), inner = ipow(N, legs_);
        do {
            count += 1.0;
            for (std::size_t x = 0; x < N; ++x) {
                for (std::size_t r = 0; r < inner; ++r) {
                    std::size_t t = r;
                    for (int j = legs_ - 1; j >= 0; --j) {
                        ys[std::size_t(j)] = t % N;
                        t /= N;
                    }
                    for (int j = 0; j < legs_; ++j) ps[std::size_t(j)] = ys[std::size_t(perm[std::size_t(j)])];
                    out[x * inner + r] += data_[offset(x, ps)];
                }
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        for (double& v : out) v /= count;
        data_ = std::move(out);
        symmetric_ = true;
    }

private:
    TorusGrid grid_;
    int legs_;
    std::vector<double> data_;
    bool symmetric_ = false;
};

/// One symmetrized tree term with one or two vertices. The root (anchor x)
/// carries root_legs legs; a second vertex z carries the remaining legs and is
/// joined to the root through the core C(x, z), stored as a density in z.
struct FactoredTerm {
    int vertices = 1;
    int root_legs = 0;
    int legs = 0;
    std::vector<double> core;
    double weight = 1.0;

    int second_legs() const { return legs - root_legs; }

    /// Vertex of each slot: index 0 is the root, then legs 1..m.
    std::vector<int> leg_assignment() const {
        std::vector<int> a(std::size_t(legs + 1), 0);
        for (int j = root_legs; j < legs; ++j) a[std::size_t(j + 1)] = 1;
        return a;
    }

    bool same_topology(const FactoredTerm& o) const {
        return vertices == o.vertices && root_legs == o.root_legs && legs == o.legs;
    }
};

using FactoredTerms = std::vector<FactoredTerm>;

/// Effective force coefficient representation: dense kernel or factored trees.
class CoeffRep {
public:
    CoeffRep(const TorusGrid& g, int legs) : grid_(g), legs_(legs), rep_(FactoredTerms{}) {}
    explicit CoeffRep(DenseCoeffTensor t) : grid_(t.grid()), legs_(t.legs()), rep_(std::move(t)) {}
    CoeffRep(const TorusGrid& g, int legs, FactoredTerms terms) : grid_(g), legs_(legs), rep_(std::move(terms)) {
        for (const auto& t : factored()) check_term(t);
    }

    /// Single-vertex term payload(x) * delta_x^{m}.
    static CoeffRep local(const Field& payload, int legs) {
        FactoredTerm t;
        t.vertices = 1;
        t.root_legs = legs;
        t.legs = legs;
        t.core = payload.values();
        return CoeffRep(payload.grid(), legs, FactoredTerms{std::move(t)});
    }

    /// c * delta^{[m]}.
    static CoeffRep delta(const TorusGrid& g, int legs, double c = 1.0) {
        return local(Field(g, c), legs);
    }

    const TorusGrid& grid() const { return grid_; }
    int legs() const { return legs_; }
    bool is_dense() const { return std::holds_alternative<DenseCoeffTensor>(rep_); }
    bool is_zero() const { return !is_dense() && factored().empty(); }
    const DenseCoeffTensor& dense() const { return std::get<DenseCoeffTensor>(rep_); }
    DenseCoeffTensor& dense() { return std::get<DenseCoeffTensor>(rep_); }
    const FactoredTerms& factored() const { return std::get<FactoredTerms>(rep_); }
    FactoredTerms& factored() { return std::get<FactoredTerms>(rep_); }

    /// Fold weights into cores and add cores of identical topology.
    void merge() {
        if (is_dense()) return;
        FactoredTerms out;
        for (auto& t : factored()) {
            auto it = std::find_if(out.begin(), out.end(), [&](const FactoredTerm& o) { return o.same_topology(t); });
            if (it == out.end()) {
                FactoredTerm c = t;
                for (double& v : c.core) v *= c.weight;
                c.weight = 1.0;
                out.push_back(std::move(c));
            } else {
                for (std::size_t i = 0; i < t.core.size(); ++i) it->core[i] += t.weight * t.core[i];
            }
        }
        std::sort(out.begin(), out.end(), [](const FactoredTerm& a, const FactoredTerm& b) {
            return std::make_pair(a.vertices, a.root_legs) < std::make_pair(b.vertices, b.root_legs);
        });
        factored() = std::move(out);
    }

    CoeffRep& operator*=(double c) {
        if (is_dense()) {
            dense() *= c;
        } else {
            for (auto& t : factored()) t.weight *= c;
        }
        return *this;
    }

    /// this += c * o, densifying when backends differ.
    CoeffRep& axpy(double c, const CoeffRep& o, const DensePolicy& policy = {}) {
        require_same(grid_, o.grid_);
        if (legs_ != o.legs_) throw RepresentationError("coefficient: leg mismatch");
        if (o.is_zero() || c == 0.0) return *this;
        if (!is_dense() && !o.is_dense()) {
            for (auto t : o.factored()) {
                t.weight *= c;
                factored().push_back(std::move(t));
            }
            merge();
            return *this;
        }
        DenseCoeffTensor a = is_dense() ? dense() : densify(policy);
        DenseCoeffTensor b = o.is_dense() ? o.dense() : o.densify(policy);
        b *= c;
        a += b;
        rep_ = std::move(a);
        return *this;
    }

    /// Expand into a dense kernel (symmetrized delta structure).
    DenseCoeffTensor densify(const DensePolicy& policy = {}) const {
        if (is_dense()) return dense();
        DenseCoeffTensor out(grid_, legs_, policy);
        const std::size_t N = grid_.sites();
        const double inv_h = 1.0 / grid_.cell();
        std::vector<std::size_t> ys(static_cast<std::size_t>(legs_));
        for (const auto& t : factored()) {
            int k0 = t.root_legs;
            int q = t.second_legs();
            double norm = 1.0 / binomial(legs_, k0);
            for_each_subset(legs_, k0, [&](const std::vector<bool>& at_root) {
                if (t.vertices == 1) {
                    double s = t.weight * std::pow(inv_h, legs_) * norm;
                    for (std::size_t x = 0; x < N; ++x) {
                        std::fill(ys.begin(), ys.end(), x);
                        out.at(x, ys) += s * t.core[x];
                    }
                    return;
                }
                if (q == 0) {
                    double s = t.weight * std::pow(inv_h, legs_) * norm * grid_.cell();
                    for (std::size_t x = 0; x < N; ++x) {
                        double acc = 0.0;
                        for (std::size_t z = 0; z < N; ++z) acc += t.core[x * N + z];
                        std::fill(ys.begin(), ys.end(), x);
                        out.at(x, ys) += s * acc;
                    }
                    return;
                }
                double s = t.weight * std::pow(inv_h, legs_ - 1) * norm;
                for (std::size_t x = 0; x < N; ++x) {
                    for (std::size_t z = 0; z < N; ++z) {
                        for (int j = 0; j < legs_; ++j) ys[std::size_t(j)] = at_root[std::size_t(j)] ? x : z;
                        out.at(x, ys) += s * t.core[x * N + z];
                    }
                }
            });
        }
        out.set_symmetric(true);
        return out;
    }

    /// Calls f with an indicator vector for every subset of size k of m slots.
    template <class F>
    static void for_each_subset(int m, int k, F&& f) {
        std::vector<bool> sel(std::size_t(m), false);
        std::fill(sel.begin(), sel.begin() + k, true);
        do {
            f(sel);
        } while (std::prev_permutation(sel.begin(), sel.end()));
    }

private:
    void check_term(const FactoredTerm& t) const {
        if (t.legs != legs_) throw RepresentationError("factored term: leg mismatch");
        if (t.vertices < 1 || t.vertices > 2) throw UnsupportedDepth();
        if (t.root_legs < 0 || t.root_legs > t.legs) throw RepresentationError("factored term: bad leg assignment");
        if (t.vertices == 1 && t.root_legs != t.legs) throw RepresentationError("factored term: single vertex holds all legs");
        std::size_t want = t.vertices == 1 ? grid_.sites() : grid_.sites() * grid_.sites();
        if (t.core.size() != want) throw RepresentationError("factored term: core size mismatch");
    }

    TorusGrid grid_;
    int legs_;
    std::variant<FactoredTerms, DenseCoeffTensor> rep_;
};

/// x -> h^{dm} sum_y F(x; y) prod_j args_j(y_j); heterogeneous arguments allowed.
inline Field tensor_contract(const CoeffRep& F, std::span<const Field* const> args) {
    if (int(args.size()) != F.legs()) throw RepresentationError("contract: wrong arity");
    for (const Field* a : args) require_same(a->grid(), F.grid());
    const TorusGrid& g = F.grid();
    const std::size_t N = g.sites();
    const double hd = g.cell();
    const int m = F.legs();
    Field out(g);
    if (F.is_dense()) {
        std::vector<double> cur = F.dense().data();
        for (int j = m - 1; j >= 0; --j) {
            const Field& a = *args[std::size_t(j)];
            std::vector<double> next(cur.size() / N, 0.0);
            for (std::size_t p = 0; p < next.size(); ++p) {
                double s = 0.0;
                const double* row = cur.data() + p * N;
                for (std::size_t y = 0; y < N; ++y) s += row[y] * a[y];
                next[p] = s * hd;
            }
            cur = std::move(next);
        }
        return Field(g, std::move(cur));
    }
    std::vector<double> root(N), second(N);
    for (const auto& t : F.factored()) {
        double norm = t.weight / binomial(m, t.root_legs);
        CoeffRep::for_each_subset(m, t.root_legs, [&](const std::vector<bool>& at_root) {
            std::fill(root.begin(), root.end(), 1.0);
            std::fill(second.begin(), second.end(), 1.0);
            for (int j = 0; j < m; ++j) {
                const Field& a = *args[std::size_t(j)];
                auto& tgt = at_root[std::size_t(j)] ? root : second;
                for (std::size_t y = 0; y < N; ++y) tgt[y] *= a[y];
            }
            if (t.vertices == 1) {
                for (std::size_t x = 0; x < N; ++x) out[x] += norm * t.core[x] * root[x];
                return;
            }
            for (std::size_t x = 0; x < N; ++x) {
                double s = 0.0;
                const double* row = t.core.data() + x * N;
                for (std::size_t z = 0; z < N; ++z) s += row[z] * second[z];
                out[x] += norm * root[x] * s * hd;
            }
        });
    }
    return out;
}

inline Field tensor_contract(const CoeffRep& F, std::initializer_list<const Field*> args) {
    std::vector<const Field*> v(args);
    return tensor_contract(F, std::span<const Field* const>(v));
}

/// Contraction with m copies of the same field.
inline Field contract_power(const CoeffRep& F, const Field& phi) {
    std::vector<const Field*> v(std::size_t(F.legs()), &phi);
    return tensor_contract(F, std::span<const Field* const>(v));
}

/// Contraction with one slot psi and the remaining slots phi.
inline Field contract_direction(const CoeffRep& F, const Field& phi, const Field& psi) {
    std::vector<const Field*> v(std::size_t(F.legs()), &phi);
    if (!v.empty()) v[0] = &psi;
    return tensor_contract(F, std::span<const Field* const>(v));
}

/// Per-anchor total variation h^{dm} sum_y |F(x; y)|.
inline std::vector<double> vm_rows(const CoeffRep& F) {
    const TorusGrid& g = F.grid();
    const std::size_t N = g.sites();
    std::vector<double> rows(N, 0.0);
    if (F.is_dense()) {
        const auto& d = F.dense().data();
        std::size_t inner = d.size() / N;
        double w = std::pow(g.cell(), F.legs());
        for (std::size_t x = 0; x < N; ++x) {
            double s = 0.0;
            for (std::size_t r = 0; r < inner; ++r) s += std::abs(d[x * inner + r]);
            rows[x] = s * w;
        }
        return rows;
    }
    for (const auto& t : F.factored()) {
        double w = std::abs(t.weight);
        for (std::size_t x = 0; x < N; ++x) {
            if (t.vertices == 1) {
                rows[x] += w * std::abs(t.core[x]);
            } else if (t.second_legs() == 0) {
                double s = 0.0;
                for (std::size_t z = 0; z < N; ++z) s += t.core[x * N + z];
                rows[x] += w * std::abs(s) * g.cell();
            } else {
                double s = 0.0;
                for (std::size_t z = 0; z < N; ++z) s += std::abs(t.core[x * N + z]);
                rows[x] += w * s * g.cell();
            }
        }
    }
    return rows;
}

/// sup_x of the total variation in the leg variables.
inline double vm_norm(const CoeffRep& F) {
    auto rows = vm_rows(F);
    return rows.empty() ? 0.0 : *std::max_element(rows.begin(), rows.end());
}

/// Largest anchor-to-leg periodic distance over entries above a relative threshold.
inline double support_radius(const CoeffRep& F, double rel = 1e-12) {
    const TorusGrid& g = F.grid();
    const std::size_t N = g.sites();
    if (F.is_dense()) {
        const auto& d = F.dense().data();
        double mx = 0.0;
        for (double v : d) mx = std::max(mx, std::abs(v));
        if (mx == 0.0 || F.legs() == 0) return 0.0;
        double thr = rel * mx, r = 0.0;
        std::size_t inner = d.size() / N;
        std::vector<std::size_t> ys(static_cast<std::size_t>(F.legs()));
        for (std::size_t x = 0; x < N; ++x) {
            for (std::size_t p = 0; p < inner; ++p) {
                if (std::abs(d[x * inner + p]) <= thr) continue;
                std::size_t t = p;
                for (int j = F.legs() - 1; j >= 0; --j) {
                    r = std::max(r, g.distance(x, t % N));
                    t /= N;
                }
            }
        }
        return r;
    }
    double mx = 0.0;
    for (const auto& t : F.factored()) {
        if (t.vertices != 2 || t.second_legs() == 0) continue;
        for (double v : t.core) mx = std::max(mx, std::abs(t.weight * v));
    }
    if (mx == 0.0) return 0.0;
    double r = 0.0;
    for (const auto& t : F.factored()) {
        if (t.vertices != 2 || t.second_legs() == 0) continue;
        for (std::size_t x = 0; x < N; ++x)
            for (std::size_t z = 0; z < N; ++z)
                if (std::abs(t.weight * t.core[x * N + z]) > rel * mx) r = std::max(r, g.distance(x, z));
    }
    return r;
}

}  // namespace rgflow
