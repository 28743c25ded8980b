#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "coeffs.hpp"
#include "grid.hpp"
#include "kernels.hpp"

namespace rgflow {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t format_version = 1;

// ---------------------------------------------------------------------------
// Raw binary streams.

class BinaryWriter {
public:
    BinaryWriter(const std::filesystem::path& p, const char (&magic)[5]) : out_(p, std::ios::binary) {
        if (!out_) throw FormatError("cannot open " + p.string() + " for writing");
        out_.write(magic, 4);
        u32(format_version);
    }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64s(std::span<const double> v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
    void grid(const TorusGrid& g) {
        u32(std::uint32_t(g.d()));
        u32(std::uint32_t(g.n()));
    }

private:
    void raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), std::streamsize(n));
        if (!out_) throw FormatError("write failed");
    }
    std::ofstream out_;
};

class BinaryReader {
public:
    BinaryReader(const std::filesystem::path& p, const char (&magic)[5]) : in_(p, std::ios::binary) {
        if (!in_) throw FormatError("cannot open " + p.string());
        char m[4];
        raw(m, 4);
        if (std::string(m, 4) != std::string(magic, 4)) throw FormatError(p.string() + ": bad magic");
        if (u32() != format_version) throw FormatError(p.string() + ": unsupported version");
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof v);
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof v);
        return v;
    }
    std::vector<double> f64s() {
        std::uint64_t n = u64();
        if (n > (std::uint64_t(1) << 34)) throw FormatError("array length out of range");
        std::vector<double> v(n);
        raw(v.data(), n * sizeof(double));
        return v;
    }
    TorusGrid grid() {
        int d = int(u32());
        int n = int(u32());
        return TorusGrid(d, n);
    }

private:
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), std::streamsize(n));
        if (!in_) throw FormatError("truncated file");
    }
    std::ifstream in_;
};

inline Field field_of(const TorusGrid& g, std::vector<double> v) {
    if (v.size() != g.sites()) throw FormatError("field size does not match grid");
    Field f(g);
    f.values() = std::move(v);
    return f;
}

// ---------------------------------------------------------------------------
// RGFK: kernel family cache.

inline std::uint64_t kernel_cache_key(const TorusGrid& g, double sigma, const ScaleGrid& s, const ChiSpec& chi) {
    std::uint64_t h = s.hash();
    std::uint64_t b;
    std::memcpy(&b, &sigma, sizeof b);
    for (std::uint64_t v : {b, std::uint64_t(g.d()), std::uint64_t(g.n()), std::uint64_t(chi.p)})
        h = (h ^ v) * 1099511628211ull;
    return h;
}

inline std::filesystem::path kernel_cache_path(const std::filesystem::path& dir, std::uint64_t key) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(key));
    return dir / ("kernels-" + std::string(buf) + ".rgfk");
}

inline void save_kernel_cache(const std::filesystem::path& p, const KernelFamily& kf) {
    BinaryWriter w(p, "RGFK");
    w.grid(kf.grid());
    w.f64(kf.sigma());
    w.u32(std::uint32_t(kf.chi().p));
    w.u64(kernel_cache_key(kf.grid(), kf.sigma(), kf.scales(), kf.chi()));
    w.u64(kf.scales().half);
    w.f64s(kf.scales().nodes);
    for (std::size_t l = 0; l < kf.scales().size(); ++l) w.f64s(kf.G_node(l).values());
    for (std::size_t l = 0; l < kf.scales().intervals(); ++l) w.f64s(kf.Gdot_mid(l).density().values());
}

inline KernelFamily load_kernel_cache(const std::filesystem::path& p, std::uint64_t expected_key) {
    BinaryReader r(p, "RGFK");
    TorusGrid g = r.grid();
    double sigma = r.f64();
    ChiSpec chi;
    chi.p = int(r.u32());
    std::uint64_t key = r.u64();
    if (key != expected_key) throw FormatError(p.string() + ": cache key mismatch");
    ScaleGrid s;
    s.half = r.u64();
    s.nodes = r.f64s();
    std::vector<Field> gn, gd;
    for (std::size_t l = 0; l < s.size(); ++l) gn.push_back(field_of(g, r.f64s()));
    for (std::size_t l = 0; l < s.intervals(); ++l) gd.push_back(field_of(g, r.f64s()));
    return KernelFamily(g, sigma, std::move(s), chi, std::move(gn), std::move(gd));
}

/// Build a kernel family, going through an on-disk cache when a directory is given.
inline KernelFamily cached_kernel_family(const TorusGrid& g, double sigma, const ScaleGrid& s,
                                         const std::optional<std::filesystem::path>& dir, ChiSpec chi = {}) {
    if (!dir) return KernelFamily(g, sigma, s, chi);
    std::uint64_t key = kernel_cache_key(g, sigma, s, chi);
    auto p = kernel_cache_path(*dir, key);
    if (std::filesystem::exists(p)) {
        try {
            return load_kernel_cache(p, key);
        } catch (const FormatError&) {
            // stale or foreign cache file; rebuild below
        }
    }
    KernelFamily kf(g, sigma, s, chi);
    std::filesystem::create_directories(*dir);
    save_kernel_cache(p, kf);
    return kf;
}

// ---------------------------------------------------------------------------
// RGFN: noise dump.

inline void save_noise(const std::filesystem::path& p, std::uint64_t seed, const Field& xi) {
    BinaryWriter w(p, "RGFN");
    w.grid(xi.grid());
    w.u64(seed);
    w.f64s(xi.values());
}

struct NoiseDump {
    std::uint64_t seed;
    Field field;
};

inline NoiseDump load_noise(const std::filesystem::path& p) {
    BinaryReader r(p, "RGFN");
    TorusGrid g = r.grid();
    std::uint64_t seed = r.u64();
    return {seed, field_of(g, r.f64s())};
}

// ---------------------------------------------------------------------------
// RGFC: coefficient snapshot.

enum class BackendTag : std::uint32_t { Dense = 0, Factored = 1 };

inline void save_coeffs(const std::filesystem::path& p, const CoeffSet& F) {
    BinaryWriter w(p, "RGFC");
    w.grid(F.grid());
    w.u32(std::uint32_t(F.order()));
    std::uint32_t count = 0;
    for (auto it = F.begin(); it != F.end(); ++it) ++count;
    w.u32(count);
    for (const auto& [key, rep] : F) {
        w.u32(std::uint32_t(key.first));
        w.u32(std::uint32_t(key.second));
        w.u32(std::uint32_t(rep.is_dense() ? BackendTag::Dense : BackendTag::Factored));
        w.f64(F.mu());
        if (rep.is_dense()) {
            w.f64s(rep.dense().data());
            continue;
        }
        w.u32(std::uint32_t(rep.factored().size()));
        for (const auto& t : rep.factored()) {
            w.u32(std::uint32_t(t.vertices));
            w.u32(std::uint32_t(t.root_legs));
            w.u32(std::uint32_t(t.legs));
            w.f64(t.weight);
            w.f64s(t.core);
        }
    }
}

inline CoeffSet load_coeffs(const std::filesystem::path& p) {
    BinaryReader r(p, "RGFC");
    TorusGrid g = r.grid();
    int order = int(r.u32());
    std::uint32_t count = r.u32();
    CoeffSet F(g, order);
    for (std::uint32_t k = 0; k < count; ++k) {
        int i = int(r.u32()), m = int(r.u32());
        auto tag = BackendTag(r.u32());
        F.set_mu(r.f64());
        if (!F.stored(i, m)) throw FormatError(p.string() + ": coefficient index out of range");
        if (tag == BackendTag::Dense) {
            DenseCoeffTensor t(g, m);
            auto v = r.f64s();
            if (v.size() != t.data().size()) throw FormatError(p.string() + ": dense payload size mismatch");
            t.data() = std::move(v);
            F.at(i, m) = CoeffRep(std::move(t));
        } else if (tag == BackendTag::Factored) {
            FactoredTerms terms(r.u32());
            for (auto& t : terms) {
                t.vertices = int(r.u32());
                t.root_legs = int(r.u32());
                t.legs = int(r.u32());
                t.weight = r.f64();
                t.core = r.f64s();
            }
            F.at(i, m) = CoeffRep(g, m, std::move(terms));
        } else {
            throw FormatError(p.string() + ": unknown backend tag");
        }
    }
    return F;
}

// ---------------------------------------------------------------------------
// RGFS: solution fields with metadata.

struct SolutionDump {
    std::uint64_t seed = 0;
    double sigma = 0.0, kappa = 0.0, lambda = 0.0;
    std::vector<std::pair<std::string, Field>> fields;
};

inline void save_solution(const std::filesystem::path& p, const SolutionDump& s) {
    if (s.fields.empty()) throw FormatError("solution dump: no fields");
    BinaryWriter w(p, "RGFS");
    w.grid(s.fields.front().second.grid());
    w.u64(s.seed);
    w.f64(s.sigma);
    w.f64(s.kappa);
    w.f64(s.lambda);
    w.u32(std::uint32_t(s.fields.size()));
    for (const auto& [name, f] : s.fields) {
        w.u32(std::uint32_t(name.size()));
        for (char c : name) w.u32(std::uint32_t(static_cast<unsigned char>(c)));
        w.f64s(f.values());
    }
}

inline SolutionDump load_solution(const std::filesystem::path& p) {
    BinaryReader r(p, "RGFS");
    TorusGrid g = r.grid();
    SolutionDump s;
    s.seed = r.u64();
    s.sigma = r.f64();
    s.kappa = r.f64();
    s.lambda = r.f64();
    std::uint32_t n = r.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
        std::string name(r.u32(), ' ');
        for (char& c : name) c = char(r.u32());
        s.fields.emplace_back(std::move(name), field_of(g, r.f64s()));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Text outputs.

/// Shortest form that round-trips through strtod.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& p, const std::vector<std::string>& header)
        : out_(p), columns_(header.size()) {
        if (!out_) throw FormatError("cannot open " + p.string() + " for writing");
        write_line(header);
    }
    CsvWriter& row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_) throw FormatError("csv: column count mismatch");
        write_line(cells);
        return *this;
    }
    CsvWriter& row(std::span<const double> values) {
        std::vector<std::string> cells;
        for (double v : values) cells.push_back(format_double(v));
        return row(cells);
    }
    CsvWriter& row(std::initializer_list<double> values) { return row(std::span<const double>(values)); }

private:
    void write_line(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }
    std::ofstream out_;
    std::size_t columns_;
};

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
    std::ofstream out(p);
    if (!out) throw FormatError("cannot open " + p.string() + " for writing");
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw FormatError("cannot open " + p.string());
    return nlohmann::json::parse(in);
}

// ---------------------------------------------------------------------------
// Flat configuration: one `key = value` per line, value in JSON syntax.

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    int d = 1;
    int n = 64;
    double sigma = 0.45;
    double eps = 0.0;
    double lambda = 0.0;
    std::string lambda_rule = "fixed";  // fixed | star | half-star
    double kappa = 0.2;
    std::vector<double> kappa_ladder{0.2, 0.1, 0.05, 0.025};
    double mu_min = 0.0;  // 0: max(kappa/8, 1e-4)
    int scale_points = 48;
    std::uint64_t seed = 1;
    std::size_t ensemble = 64;
    std::string counterterms = "compute";  // compute | exact | file | zero
    std::string counterterm_file;
    bool lambda_override = false;
    int max_iter = 200;
    double tol = 1e-12;
    std::string output = "out";
    unsigned workers = 1;
    std::string cache_dir;

    double mu_min_for(double k) const { return mu_min > 0.0 ? mu_min : std::max(k / 8.0, 1e-4); }

    nlohmann::json to_json() const {
        return {{"d", d},
                {"n", n},
                {"sigma", sigma},
                {"eps", eps},
                {"lambda", lambda},
                {"lambda_rule", lambda_rule},
                {"kappa", kappa},
                {"kappa_ladder", kappa_ladder},
                {"mu_min", mu_min},
                {"scale_points", scale_points},
                {"seed", seed},
                {"ensemble", ensemble},
                {"counterterms", counterterms},
                {"counterterm_file", counterterm_file},
                {"lambda_override", lambda_override},
                {"max_iter", max_iter},
                {"tol", tol},
                {"output", output},
                {"workers", workers},
                {"cache_dir", cache_dir}};
    }

    /// Assigns one key from a JSON value; unknown keys are rejected.
    void set(const std::string& key, const nlohmann::json& v) {
        try {
            if (key == "d") d = v.get<int>();
            else if (key == "n") n = v.get<int>();
            else if (key == "sigma") sigma = v.get<double>();
            else if (key == "eps") eps = v.get<double>();
            else if (key == "lambda") lambda = v.get<double>();
            else if (key == "lambda_rule") lambda_rule = v.get<std::string>();
            else if (key == "kappa") kappa = v.get<double>();
            else if (key == "kappa_ladder") kappa_ladder = v.get<std::vector<double>>();
            else if (key == "mu_min") mu_min = v.get<double>();
            else if (key == "scale_points") scale_points = v.get<int>();
            else if (key == "seed") seed = v.get<std::uint64_t>();
            else if (key == "ensemble") ensemble = v.get<std::size_t>();
            else if (key == "counterterms") counterterms = v.get<std::string>();
            else if (key == "counterterm_file") counterterm_file = v.get<std::string>();
            else if (key == "lambda_override") lambda_override = v.get<bool>();
            else if (key == "max_iter") max_iter = v.get<int>();
            else if (key == "tol") tol = v.get<double>();
            else if (key == "output") output = v.get<std::string>();
            else if (key == "workers") workers = v.get<unsigned>();
            else if (key == "cache_dir") cache_dir = v.get<std::string>();
            else throw ConfigError("config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config: bad value for '" + key + "': " + e.what());
        }
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        for (const auto& [k, v] : j.items()) c.set(k, v);
        return c;
    }

    /// `key=value` with a JSON value; bare words are taken as strings.
    void apply_override(const std::string& kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("config: override needs key=value: " + kv);
        set(trim(kv.substr(0, eq)), parse_value(trim(kv.substr(eq + 1))));
    }

    void load_file(const std::filesystem::path& p) {
        std::ifstream in(p);
        if (!in) throw ConfigError("config: cannot open " + p.string());
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            try {
                apply_override(line);
            } catch (const ConfigError& e) {
                throw ConfigError(p.string() + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    /// Basic range checks that do not need the power counting.
    void validate() const {
        if (d != 1 && d != 2) throw ConfigError("config: d must be 1 or 2");
        if (n < 8 || (n & (n - 1))) throw ConfigError("config: n must be a power of two >= 8");
        if (!(kappa > 0.0 && kappa <= 1.0)) throw ConfigError("config: kappa must lie in (0, 1]");
        for (double k : kappa_ladder)
            if (!(k > 0.0 && k <= 1.0)) throw ConfigError("config: kappa ladder entries must lie in (0, 1]");
        if (scale_points < 2) throw ConfigError("config: scale_points must be at least 2");
        if (ensemble < 2) throw ConfigError("config: ensemble must have at least 2 members");
        if (counterterms != "compute" && counterterms != "exact" && counterterms != "file" && counterterms != "zero")
            throw ConfigError("config: counterterms must be compute, exact, file or zero");
        if (counterterms == "file" && counterterm_file.empty())
            throw ConfigError("config: counterterm_file required when counterterms = file");
        if (lambda_rule != "fixed" && lambda_rule != "star" && lambda_rule != "half-star")
            throw ConfigError("config: lambda_rule must be fixed, star or half-star");
        if (workers == 0) throw ConfigError("config: workers must be positive");
    }

    /// Hash of the result-determining keys; output paths and worker count are excluded.
    std::uint64_t hash() const {
        nlohmann::json j = to_json();
        j.erase("output");
        j.erase("workers");
        j.erase("cache_dir");
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : j.dump()) h = (h ^ c) * 1099511628211ull;
        return h;
    }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }
    static nlohmann::json parse_value(const std::string& s) {
        auto j = nlohmann::json::parse(s, nullptr, false);
        if (j.is_discarded()) return s;
        return j;
    }
};

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace rgflow
