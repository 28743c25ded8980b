#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <fftw3.h>

namespace rgflow {

using cplx = std::complex<double>;

struct GridError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Periodic lattice of n^d sites with period 2*pi per axis.
class TorusGrid {
public:
    TorusGrid(int d, int n) : d_(d), n_(n) {
        if (d != 1 && d != 2) throw GridError("grid: dimension must be 1 or 2");
        if (n < 8 || (n & (n - 1)) != 0) throw GridError("grid: n must be a power of two >= 8");
        h_ = 2.0 * std::numbers::pi / n;
        sites_ = d == 1 ? std::size_t(n) : std::size_t(n) * std::size_t(n);
        modes_ = d == 1 ? std::size_t(n / 2 + 1) : std::size_t(n) * std::size_t(n / 2 + 1);
    }

    int d() const { return d_; }
    int n() const { return n_; }
    double h() const { return h_; }
    /// Lattice cell volume h^d.
    double cell() const { return d_ == 1 ? h_ : h_ * h_; }
    std::size_t sites() const { return sites_; }
    /// Number of stored modes of the half spectrum (last axis halved).
    std::size_t modes() const { return modes_; }

    /// Signed integer offset along one axis, mapped into (-n/2, n/2].
    int wrap(int k) const {
        k %= n_;
        if (k < 0) k += n_;
        return k > n_ / 2 ? k - n_ : k;
    }

    /// Integer coordinates of a site.
    std::array<int, 2> coords(std::size_t s) const {
        if (d_ == 1) return {int(s), 0};
        return {int(s / std::size_t(n_)), int(s % std::size_t(n_))};
    }

    std::size_t index(int i, int j = 0) const {
        i = ((i % n_) + n_) % n_;
        if (d_ == 1) return std::size_t(i);
        j = ((j % n_) + n_) % n_;
        return std::size_t(i) * std::size_t(n_) + std::size_t(j);
    }

    /// Site of x - y (periodic).
    std::size_t diff(std::size_t x, std::size_t y) const {
        if (d_ == 1) return (x + sites_ - y) % sites_;
        auto a = coords(x), b = coords(y);
        return index(a[0] - b[0], a[1] - b[1]);
    }

    std::size_t neg(std::size_t x) const { return diff(0, x); }

    /// Periodic geodesic distance of a site from the origin.
    double radius(std::size_t s) const {
        auto c = coords(s);
        double r2 = 0.0;
        for (int a = 0; a < d_; ++a) {
            double v = wrap(c[a]) * h_;
            r2 += v * v;
        }
        return std::sqrt(r2);
    }

    double distance(std::size_t x, std::size_t y) const { return radius(diff(x, y)); }

    /// Mean distance from the centre over one lattice cell.
    double cell_mean_radius() const {
        if (d_ == 1) return h_ / 4.0;
        return h_ * (std::sqrt(2.0) + std::asinh(1.0)) / 6.0;
    }

    /// Squared integer frequency of a half-spectrum mode.
    double k2(std::size_t mode) const {
        if (d_ == 1) {
            double k = double(mode);
            return k * k;
        }
        std::size_t half = std::size_t(n_ / 2 + 1);
        int k1 = wrap(int(mode / half));
        double k2v = double(mode % half);
        return double(k1) * k1 + k2v * k2v;
    }

    /// Multiplicity of a half-spectrum mode in the full spectrum.
    double mode_weight(std::size_t mode) const {
        std::size_t last = d_ == 1 ? mode : mode % std::size_t(n_ / 2 + 1);
        return (last == 0 || last == std::size_t(n_ / 2)) ? 1.0 : 2.0;
    }

    /// Position of one axis coordinate in (-pi, pi].
    double coord(std::size_t s, int axis) const { return wrap(coords(s)[axis]) * h_; }

    bool operator==(const TorusGrid& o) const { return d_ == o.d_ && n_ == o.n_; }

private:
    int d_;
    int n_;
    double h_;
    std::size_t sites_;
    std::size_t modes_;
};

inline void require_same(const TorusGrid& a, const TorusGrid& b) {
    if (!(a == b)) throw GridError("grid mismatch");
}

/// Real lattice function.
class Field {
public:
    Field() : grid_(1, 8) {}
    explicit Field(const TorusGrid& g, double v = 0.0) : grid_(g), values_(g.sites(), v) {}
    Field(const TorusGrid& g, std::vector<double> values) : grid_(g), values_(std::move(values)) {
        if (values_.size() != g.sites()) throw GridError("field: size does not match grid");
    }

    const TorusGrid& grid() const { return grid_; }
    std::size_t size() const { return values_.size(); }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    double sup_norm() const {
        double m = 0.0;
        for (double v : values_) {
            if (std::isnan(v)) return v;
            m = std::max(m, std::abs(v));
        }
        return m;
    }

    /// Lattice integral h^d * sum.
    double integral() const {
        double s = 0.0;
        for (double v : values_) s += v;
        return s * grid_.cell();
    }

    bool finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    Field& operator+=(const Field& o) {
        require_same(grid_, o.grid_);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
        return *this;
    }
    Field& operator-=(const Field& o) {
        require_same(grid_, o.grid_);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
        return *this;
    }
    Field& operator*=(double c) {
        for (double& v : values_) v *= c;
        return *this;
    }
    /// this += c * o
    Field& axpy(double c, const Field& o) {
        require_same(grid_, o.grid_);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += c * o.values_[i];
        return *this;
    }

    friend Field operator+(Field a, const Field& b) { return a += b; }
    friend Field operator-(Field a, const Field& b) { return a -= b; }
    friend Field operator*(double c, Field a) { return a *= c; }

    /// Pointwise product.
    friend Field operator*(const Field& a, const Field& b) {
        require_same(a.grid_, b.grid_);
        Field r(a.grid_);
        for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * b[i];
        return r;
    }

private:
    TorusGrid grid_;
    std::vector<double> values_;
};

inline double sup_distance(const Field& a, const Field& b) {
    require_same(a.grid(), b.grid());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double v = std::abs(a[i] - b[i]);
        if (std::isnan(v)) return v;
        m = std::max(m, v);
    }
    return m;
}

/// Cached FFTW plans per grid. Plans are created under a lock and executed
/// with the new-array interface, which is thread safe.
class Spectral {
public:
    static const Spectral& of(const TorusGrid& g) {
        static std::mutex mu;
        static std::map<std::pair<int, int>, std::unique_ptr<Spectral>> cache;
        std::lock_guard<std::mutex> lock(mu);
        auto key = std::make_pair(g.d(), g.n());
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, std::unique_ptr<Spectral>(new Spectral(g))).first;
        return *it->second;
    }

    ~Spectral() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
    }
    Spectral(const Spectral&) = delete;
    Spectral& operator=(const Spectral&) = delete;

    /// Unnormalized forward transform of a real array.
    std::vector<cplx> forward(std::span<const double> in) const {
        std::vector<double> buf(in.begin(), in.end());
        std::vector<cplx> out(grid_.modes());
        fftw_execute_dft_r2c(fwd_, buf.data(), reinterpret_cast<fftw_complex*>(out.data()));
        return out;
    }

    /// Normalized inverse transform (inverse of forward).
    std::vector<double> inverse(std::span<const cplx> in) const {
        std::vector<cplx> buf(in.begin(), in.end());
        std::vector<double> out(grid_.sites());
        fftw_execute_dft_c2r(inv_, reinterpret_cast<fftw_complex*>(buf.data()), out.data());
        double s = 1.0 / double(grid_.sites());
        for (double& v : out) v *= s;
        return out;
    }

private:
    explicit Spectral(const TorusGrid& g) : grid_(g) {
        std::vector<double> r(g.sites());
        std::vector<cplx> c(g.modes());
        auto* cp = reinterpret_cast<fftw_complex*>(c.data());
        unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        if (g.d() == 1) {
            fwd_ = fftw_plan_dft_r2c_1d(g.n(), r.data(), cp, flags);
            inv_ = fftw_plan_dft_c2r_1d(g.n(), cp, r.data(), flags);
        } else {
            fwd_ = fftw_plan_dft_r2c_2d(g.n(), g.n(), r.data(), cp, flags);
            inv_ = fftw_plan_dft_c2r_2d(g.n(), g.n(), cp, r.data(), flags);
        }
    }

    TorusGrid grid_;
    fftw_plan fwd_{};
    fftw_plan inv_{};
};

/// Translation-invariant kernel: density against Lebesgue measure plus its
/// Fourier multiplier h^d * DFT(density) on the half spectrum.
class GridKernel {
public:
    static GridKernel from_density(Field density) {
        GridKernel k(density.grid());
        k.multiplier_ = Spectral::of(density.grid()).forward(density.values());
        for (auto& c : k.multiplier_) c *= density.grid().cell();
        k.density_ = std::move(density);
        return k;
    }

    static GridKernel from_multiplier(const TorusGrid& g, std::vector<cplx> mult) {
        if (mult.size() != g.modes()) throw GridError("kernel: multiplier size mismatch");
        GridKernel k(g);
        auto d = Spectral::of(g).inverse(mult);
        double s = 1.0 / g.cell();
        for (double& v : d) v *= s;
        k.density_ = Field(g, std::move(d));
        k.multiplier_ = std::move(mult);
        return k;
    }

    /// Real multiplier given as a function of |k|^2.
    template <class F>
    static GridKernel from_symbol(const TorusGrid& g, F&& symbol) {
        std::vector<cplx> m(g.modes());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = symbol(g.k2(i));
        return from_multiplier(g, std::move(m));
    }

    /// Lattice Dirac delta at the origin (density h^{-d}).
    static GridKernel delta(const TorusGrid& g) {
        return from_symbol(g, [](double) { return 1.0; });
    }

    const TorusGrid& grid() const { return density_.grid(); }
    const Field& density() const { return density_; }
    const std::vector<cplx>& multiplier() const { return multiplier_; }

    /// Total variation norm h^d * sum |density|.
    double tv_norm() const {
        double s = 0.0;
        for (double v : density_.values()) s += std::abs(v);
        return s * grid().cell();
    }

    double mass() const { return density_.integral(); }

    double min_density() const {
        return *std::min_element(density_.values().begin(), density_.values().end());
    }

    /// Kernel composition k1 * k2.
    friend GridKernel compose(const GridKernel& a, const GridKernel& b) {
        require_same(a.grid(), b.grid());
        std::vector<cplx> m(a.multiplier_.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = a.multiplier_[i] * b.multiplier_[i];
        return from_multiplier(a.grid(), std::move(m));
    }

private:
    explicit GridKernel(const TorusGrid& g) : density_(g) {}
    Field density_;
    std::vector<cplx> multiplier_;
};

/// Periodic convolution (k * a)(x) = h^d sum_y k(x - y) a(y) via the multiplier.
inline Field convolve(const Field& a, const GridKernel& k) {
    require_same(a.grid(), k.grid());
    const auto& sp = Spectral::of(a.grid());
    auto ah = sp.forward(a.values());
    const auto& m = k.multiplier();
    for (std::size_t i = 0; i < ah.size(); ++i) ah[i] *= m[i];
    return Field(a.grid(), sp.inverse(ah));
}

/// Convolution with a real multiplier supplied directly (no kernel object).
inline Field apply_symbol(const Field& a, std::span<const double> symbol) {
    const auto& sp = Spectral::of(a.grid());
    auto ah = sp.forward(a.values());
    if (symbol.size() != ah.size()) throw GridError("symbol size mismatch");
    for (std::size_t i = 0; i < ah.size(); ++i) ah[i] *= symbol[i];
    return Field(a.grid(), sp.inverse(ah));
}

}  // namespace rgflow
