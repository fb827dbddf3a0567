#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfpinn {

/// Error raised by configuration parsing/validation.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Error raised by dataset loading or malformed input files.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Error raised when a numerical routine fails (divergence, non-finite
/// values, solver non-convergence).
struct NumericsError : std::runtime_error {
    explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense column-major matrix. Rows index features/components, columns index
/// batch points, so a batch of n-dimensional samples is n x N.
template <class T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(int r, int c, T fill = T(0)) : rows(r), cols(c), a(size_t(r) * c, fill) {}

    T& operator()(int i, int j) { return a[size_t(j) * rows + i]; }
    const T& operator()(int i, int j) const { return a[size_t(j) * rows + i]; }

    size_t size() const { return a.size(); }
    T* data() { return a.data(); }
    const T* data() const { return a.data(); }

    void resize(int r, int c) {
        rows = r;
        cols = c;
        a.assign(size_t(r) * c, T(0));
    }
    void zero() { std::fill(a.begin(), a.end(), T(0)); }

    static Mat col(const std::vector<T>& v) {
        Mat m(int(v.size()), 1);
        m.a = v;
        return m;
    }
    static Mat row(const std::vector<T>& v) {
        Mat m(1, int(v.size()));
        m.a = v;
        return m;
    }
};

template <class T, class U>
Mat<T> cast_mat(const Mat<U>& m) {
    Mat<T> r(m.rows, m.cols);
    for (size_t i = 0; i < m.a.size(); ++i) r.a[i] = T(m.a[i]);
    return r;
}

/// Counter-based RNG built on SplitMix64. Fully specified so that sampled
/// datasets and initializations reproduce bit-exactly across platforms.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    /// Derive an independent stream for a named purpose.
    static Rng stream(uint64_t seed, uint64_t stream_id) {
        Rng mix(seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1)));
        mix.next();
        return mix;
    }

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (explicit, implementation-independent).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

  private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline double relative_diff(double a, double b, double floor = 1e-10) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace mfpinn
