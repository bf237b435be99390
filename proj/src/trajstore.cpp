#include "sake/trajstore.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "sake/rng.hpp"

namespace sake {

void TrajectoryPool::validate() const {
    require(n_traj >= 1 && T >= 2 && C >= 1 && H >= 1 && W >= 1, ErrKind::shape,
            "pool dims must satisfy n_traj>=1, T>=2, C,H,W>=1");
    require(data.size() == size_t(n_traj) * traj_size(), ErrKind::shape,
            "pool data size does not match dims");
    require(mask.empty() || mask.size() == size_t(H) * W, ErrKind::shape,
            "mask must be empty or H*W bytes");
    for (float v : data) {
        if (!std::isfinite(v)) fail(ErrKind::io_non_finite, "pool contains non-finite values");
    }
}

void PerturbSpec::validate() const {
    require(sigma >= 0.0, ErrKind::config, "sigma must be >= 0");
    require(factor == 1 || factor == 2 || factor == 4, ErrKind::config,
            "downsample factor must be one of {1,2,4}");
    require(mask_fraction >= 0.0 && mask_fraction < 1.0, ErrKind::config,
            "mask_fraction must lie in [0,1)");
}

PerturbKind perturb_kind_from_string(const std::string& s) {
    if (s == "identity") return PerturbKind::identity;
    if (s == "gaussian_noise") return PerturbKind::gaussian_noise;
    if (s == "downsample") return PerturbKind::downsample;
    if (s == "random_mask") return PerturbKind::random_mask;
    fail(ErrKind::config, "unknown perturbation kind '" + s + "'");
}

std::string to_string(PerturbKind k) {
    switch (k) {
        case PerturbKind::identity: return "identity";
        case PerturbKind::gaussian_noise: return "gaussian_noise";
        case PerturbKind::downsample: return "downsample";
        case PerturbKind::random_mask: return "random_mask";
    }
    return "?";
}

namespace {

constexpr int kMaxStabilityResamples = 100;

// Spectral radius of the VAR companion matrix [A1 .. Ap; I 0].
double companion_spectral_radius(const std::vector<Eigen::MatrixXd>& coeffs, int dim, int lag) {
    const int n = dim * lag;
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < lag; ++i) companion.block(0, i * dim, dim, dim) = coeffs[size_t(i)];
    if (lag > 1)
        companion.block(dim, 0, n - dim, n - dim) =
            Eigen::MatrixXd::Identity(n - dim, n - dim);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, /*computeEigenvectors=*/false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TrajectoryPool generate_linear_lag_system(const LinearSystemSpec& spec) {
    require(spec.true_lag >= 1, ErrKind::config, "true_lag must be >= 1");
    require(spec.T > spec.true_lag + 2, ErrKind::config, "T must exceed true_lag + 2");
    require(spec.dim >= 1 && spec.n_traj >= 1, ErrKind::config, "dim and n_traj must be >= 1");
    require(spec.noise_sigma >= 0.0, ErrKind::config, "noise_sigma must be >= 0");
    require(spec.stability_margin > 0.0 && spec.stability_margin < 1.0, ErrKind::config,
            "stability_margin must lie in (0,1)");

    require(spec.burn_in >= 0, ErrKind::config, "burn_in must be >= 0");

    // Entry scale puts the typical companion spectral radius just below the
    // stability cap, so accepted draws keep long memory without shrinkage.
    RngStream coef_rng = RngStream(spec.seed).derive(0xC0EF);
    const double entry_scale = spec.coef_scale * 0.88 * (1.0 - spec.stability_margin) /
                               std::sqrt(double(spec.dim) * spec.true_lag);

    std::vector<Eigen::MatrixXd> coeffs;
    double radius = 0.0;
    bool stable = false;
    for (int attempt = 0; attempt < kMaxStabilityResamples && !stable; ++attempt) {
        coeffs.assign(size_t(spec.true_lag), Eigen::MatrixXd(spec.dim, spec.dim));
        for (auto& a : coeffs)
            for (int r = 0; r < spec.dim; ++r)
                for (int c = 0; c < spec.dim; ++c) a(r, c) = entry_scale * coef_rng.normal();
        radius = companion_spectral_radius(coeffs, spec.dim, spec.true_lag);
        stable = radius <= 1.0 - spec.stability_margin;
    }
    if (!stable)
        fail(ErrKind::generation,
             "no stable coefficient draw after " + std::to_string(kMaxStabilityResamples) +
                 " resamples (dim=" + std::to_string(spec.dim) +
                 ", true_lag=" + std::to_string(spec.true_lag) +
                 ", stability_margin=" + std::to_string(spec.stability_margin) + ")");

    if (spec.target_radius > 0.0 && radius > 0.0) {
        require(spec.target_radius <= 1.0 - spec.stability_margin, ErrKind::config,
                "target_radius must respect the stability margin");
        // Scaling lag block i by s^i maps every companion eigenvalue
        // lambda to s*lambda, so the radius lands on the target exactly.
        const double s = spec.target_radius / radius;
        for (int i = 0; i < spec.true_lag; ++i)
            coeffs[size_t(i)] *= std::pow(s, double(i + 1));
        radius = spec.target_radius;
    }

    TrajectoryPool pool;
    pool.n_traj = spec.n_traj;
    pool.T = spec.T;
    pool.C = spec.dim;
    pool.H = 1;
    pool.W = 1;
    pool.data.resize(size_t(spec.n_traj) * pool.traj_size());

    RngStream traj_rng = RngStream(spec.seed).derive(0xDA7A);
    std::vector<Eigen::VectorXd> history(size_t(spec.true_lag));
    for (int traj = 0; traj < spec.n_traj; ++traj) {
        RngStream rng = traj_rng.derive(uint64_t(traj));
        const int total = spec.burn_in + spec.T;
        for (int t = 0; t < total; ++t) {
            Eigen::VectorXd x(spec.dim);
            if (t < spec.true_lag) {
                for (int c = 0; c < spec.dim; ++c) x[c] = rng.normal();
            } else {
                x.setZero();
                for (int i = 0; i < spec.true_lag; ++i)
                    x += coeffs[size_t(i)] * history[size_t((t - 1 - i) % spec.true_lag)];
                for (int c = 0; c < spec.dim; ++c) x[c] += spec.noise_sigma * rng.normal();
            }
            history[size_t(t % spec.true_lag)] = x;
            if (t >= spec.burn_in)
                for (int c = 0; c < spec.dim; ++c)
                    pool.at(traj, t - spec.burn_in, c, 0, 0) = float(x[c]);
        }
    }

    pool.meta = {{"generator", "linear"},
                 {"seed", spec.seed},
                 {"params",
                  {{"dim", spec.dim},
                   {"true_lag", spec.true_lag},
                   {"n_traj", spec.n_traj},
                   {"T", spec.T},
                   {"noise_sigma", spec.noise_sigma},
                   {"stability_margin", spec.stability_margin},
                   {"coef_scale", spec.coef_scale},
                   {"burn_in", spec.burn_in},
                   {"spectral_radius", radius}}}};
    return pool;
}

void diffusion2d_step(std::vector<double>& field, int grid, double courant) {
    const int n = grid;
    std::vector<double> next(field.size());
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double c = field[size_t(y) * n + x];
            const double up = field[size_t(y > 0 ? y - 1 : y) * n + x];
            const double dn = field[size_t(y + 1 < n ? y + 1 : y) * n + x];
            const double lf = field[size_t(y) * n + (x > 0 ? x - 1 : x)];
            const double rt = field[size_t(y) * n + (x + 1 < n ? x + 1 : x)];
            next[size_t(y) * n + x] = c + courant * (up + dn + lf + rt - 4.0 * c);
        }
    }
    field.swap(next);
}

TrajectoryPool generate_diffusion2d(const Diffusion2dSpec& spec) {
    require(spec.grid >= 2 && spec.n_traj >= 1 && spec.T >= 2, ErrKind::config,
            "grid>=2, n_traj>=1, T>=2 required");
    const double courant = spec.diffusivity * spec.dt / (spec.dx * spec.dx);
    require(courant <= 0.25, ErrKind::config,
            "explicit scheme unstable: diffusivity*dt/dx^2 = " + std::to_string(courant) +
                " exceeds 0.25");

    const int n = spec.grid;
    TrajectoryPool pool;
    pool.n_traj = spec.n_traj;
    pool.T = spec.T;
    pool.C = 1;
    pool.H = n;
    pool.W = n;
    pool.data.resize(size_t(spec.n_traj) * pool.traj_size());

    RngStream base = RngStream(spec.seed).derive(0xD1FF);
    std::vector<double> field(size_t(n) * n);
    for (int traj = 0; traj < spec.n_traj; ++traj) {
        RngStream rng = base.derive(uint64_t(traj));
        // Smooth initial condition: a few random low-frequency cosine modes,
        // which are compatible with the zero-flux boundary.
        std::fill(field.begin(), field.end(), 0.0);
        constexpr int kModes = 3;
        for (int kx = 0; kx <= kModes; ++kx) {
            for (int ky = 0; ky <= kModes; ++ky) {
                const double amp = rng.normal() / (1.0 + kx + ky);
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x)
                        field[size_t(y) * n + x] +=
                            amp * std::cos(std::numbers::pi * kx * (x + 0.5) / n) *
                            std::cos(std::numbers::pi * ky * (y + 0.5) / n);
            }
        }
        for (int t = 0; t < spec.T; ++t) {
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    pool.at(traj, t, 0, y, x) = float(field[size_t(y) * n + x]);
            if (t + 1 == spec.T) break;
            diffusion2d_step(field, n, courant);
        }
    }

    pool.meta = {{"generator", "diffusion2d"},
                 {"seed", spec.seed},
                 {"params",
                  {{"grid", spec.grid},
                   {"n_traj", spec.n_traj},
                   {"T", spec.T},
                   {"diffusivity", spec.diffusivity},
                   {"dt", spec.dt},
                   {"dx", spec.dx}}}};
    return pool;
}

namespace {

TrajectoryPool subset(const TrajectoryPool& pool, const std::vector<int>& idx) {
    TrajectoryPool out;
    out.n_traj = int(idx.size());
    out.T = pool.T;
    out.C = pool.C;
    out.H = pool.H;
    out.W = pool.W;
    out.mask = pool.mask;
    out.meta = pool.meta;
    out.data.resize(idx.size() * pool.traj_size());
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(pool.data.data() + size_t(idx[i]) * pool.traj_size(), pool.traj_size(),
                    out.data.data() + i * pool.traj_size());
    return out;
}

}  // namespace

SplitPool split_pool(const TrajectoryPool& pool, const std::array<double, 3>& fractions,
                     uint64_t seed) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    require(std::abs(total - 1.0) <= 1e-9, ErrKind::split, "fractions must sum to 1");
    for (double f : fractions) require(f >= 0.0, ErrKind::split, "fractions must be >= 0");

    int nonzero = 0;
    for (double f : fractions)
        if (f > 0.0) ++nonzero;
    require(pool.n_traj >= nonzero, ErrKind::split,
            "pool has fewer trajectories than nonzero split fractions");

    // Membership depends only on (n_traj, fractions, seed).
    std::vector<int> order(size_t(pool.n_traj));
    std::iota(order.begin(), order.end(), 0);
    RngStream rng = RngStream(seed).derive(0x5B17);
    rng.shuffle(order);

    // Floor allocation with the remainder assigned to train; any nonzero
    // fraction that floored to zero then takes one trajectory from the
    // largest split so no requested split comes back empty.
    std::array<int, 3> counts{};
    for (int i = 0; i < 3; ++i) counts[size_t(i)] = int(std::floor(fractions[size_t(i)] * pool.n_traj));
    counts[0] += pool.n_traj - (counts[0] + counts[1] + counts[2]);
    for (int i = 0; i < 3; ++i) {
        if (fractions[size_t(i)] > 0.0 && counts[size_t(i)] == 0) {
            const int donor =
                int(std::max_element(counts.begin(), counts.end()) - counts.begin());
            require(counts[size_t(donor)] > 1, ErrKind::split,
                    "cannot allocate at least one trajectory per nonzero split");
            --counts[size_t(donor)];
            ++counts[size_t(i)];
        }
    }

    SplitPool out;
    out.fractions = fractions;
    out.seed = seed;
    auto take = [&order](int offset, int count) {
        std::vector<int> idx(order.begin() + offset, order.begin() + offset + count);
        std::sort(idx.begin(), idx.end());
        return idx;
    };
    out.train_idx = take(0, counts[0]);
    out.val_idx = take(counts[0], counts[1]);
    out.test_idx = take(counts[0] + counts[1], counts[2]);
    if (!out.train_idx.empty()) out.train = subset(pool, out.train_idx);
    if (!out.val_idx.empty()) out.val = subset(pool, out.val_idx);
    if (!out.test_idx.empty()) out.test = subset(pool, out.test_idx);
    return out;
}

TrajectoryPool perturb(const TrajectoryPool& pool, const PerturbSpec& spec) {
    spec.validate();
    TrajectoryPool out = pool;
    switch (spec.kind) {
        case PerturbKind::identity:
            return out;
        case PerturbKind::gaussian_noise: {
            if (spec.sigma == 0.0) return out;
            RngStream rng = RngStream(spec.seed).derive(0x601E);
            for (float& v : out.data) v = float(double(v) + spec.sigma * rng.normal());
            out.meta["perturb"] = {{"kind", "gaussian_noise"}, {"sigma", spec.sigma}};
            return out;
        }
        case PerturbKind::downsample: {
            if (spec.factor == 1) return out;
            require(pool.H % spec.factor == 0 && pool.W % spec.factor == 0, ErrKind::shape,
                    "downsample factor must divide H and W");
            const int h = pool.H / spec.factor, w = pool.W / spec.factor;
            out.H = h;
            out.W = w;
            out.mask.clear();
            out.data.assign(size_t(pool.n_traj) * pool.T * pool.C * h * w, 0.0f);
            const double inv = 1.0 / (spec.factor * spec.factor);
            for (int traj = 0; traj < pool.n_traj; ++traj)
                for (int t = 0; t < pool.T; ++t)
                    for (int c = 0; c < pool.C; ++c)
                        for (int y = 0; y < h; ++y)
                            for (int x = 0; x < w; ++x) {
                                double acc = 0.0;
                                for (int dy = 0; dy < spec.factor; ++dy)
                                    for (int dx = 0; dx < spec.factor; ++dx)
                                        acc += pool.at(traj, t, c, y * spec.factor + dy,
                                                       x * spec.factor + dx);
                                out.data[((size_t(traj) * pool.T + t) * pool.C + c) *
                                             size_t(h) * w +
                                         size_t(y) * w + x] = float(acc * inv);
                            }
            out.meta["perturb"] = {{"kind", "downsample"}, {"factor", spec.factor}};
            return out;
        }
        case PerturbKind::random_mask: {
            const int sites = pool.H * pool.W;
            const int masked = int(std::floor(spec.mask_fraction * sites));
            out.mask.assign(size_t(sites), 0);
            if (masked > 0) {
                RngStream rng = RngStream(spec.seed).derive(0x3A5C);
                for (int s : rng.sample_without_replacement(sites, masked))
                    out.mask[size_t(s)] = 1;
                for (int traj = 0; traj < pool.n_traj; ++traj)
                    for (int t = 0; t < pool.T; ++t)
                        for (int c = 0; c < pool.C; ++c) {
                            float* f = out.frame(traj, t) + size_t(c) * sites;
                            for (int s = 0; s < sites; ++s)
                                if (out.mask[size_t(s)]) f[s] = 0.0f;
                        }
            }
            out.meta["perturb"] = {{"kind", "random_mask"},
                                   {"mask_fraction", spec.mask_fraction}};
            return out;
        }
    }
    fail(ErrKind::config, "unreachable perturb kind");
}

// On-disk layout: "SAKE" | version u8 | flags u8 (bit0 = mask present) |
// 2 reserved bytes | n_traj,T,C,H,W as LE u32 | payload floats LE |
// optional H*W mask bytes | u32 length-prefixed UTF-8 JSON meta.
namespace {

constexpr char kMagic[4] = {'S', 'A', 'K', 'E'};

void put_u32(std::ostream& os, uint32_t v) {
    const char bytes[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                           char((v >> 24) & 0xff)};
    os.write(bytes, 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) fail(ErrKind::io_truncated, "file ends inside header");
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

void write_pool(const TrajectoryPool& pool, const std::filesystem::path& path) {
    pool.validate();
    std::ofstream os(path, std::ios::binary);
    require(bool(os), ErrKind::io_other, "cannot open '" + path.string() + "' for writing");

    os.write(kMagic, 4);
    const char version = char(kFormatVersion);
    const char flags = pool.mask.empty() ? 0 : 1;
    const char reserved[2] = {0, 0};
    os.write(&version, 1);
    os.write(&flags, 1);
    os.write(reserved, 2);
    for (uint32_t v : {uint32_t(pool.n_traj), uint32_t(pool.T), uint32_t(pool.C),
                       uint32_t(pool.H), uint32_t(pool.W)})
        put_u32(os, v);

    static_assert(sizeof(float) == 4);
    // Little-endian host assumed for the bulk float write.
    os.write(reinterpret_cast<const char*>(pool.data.data()),
             std::streamsize(pool.data.size() * 4));
    if (!pool.mask.empty())
        os.write(reinterpret_cast<const char*>(pool.mask.data()),
                 std::streamsize(pool.mask.size()));

    const std::string meta = pool.meta.is_null() ? "{}" : pool.meta.dump();
    put_u32(os, uint32_t(meta.size()));
    os.write(meta.data(), std::streamsize(meta.size()));
    require(bool(os), ErrKind::io_other, "write failed for '" + path.string() + "'");
}

TrajectoryPool read_pool(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), ErrKind::io_other, "cannot open '" + path.string() + "'");

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        fail(ErrKind::io_bad_magic, "'" + path.string() + "' is not a trajectory file");
    char version = 0, flags = 0, reserved[2];
    is.read(&version, 1);
    is.read(&flags, 1);
    is.read(reserved, 2);
    if (!is) fail(ErrKind::io_truncated, "file ends inside header");
    if (version != kFormatVersion)
        fail(ErrKind::io_bad_version,
             "unsupported version " + std::to_string(int(version)));

    TrajectoryPool pool;
    pool.n_traj = int(get_u32(is));
    pool.T = int(get_u32(is));
    pool.C = int(get_u32(is));
    pool.H = int(get_u32(is));
    pool.W = int(get_u32(is));
    require(pool.n_traj >= 1 && pool.T >= 2 && pool.C >= 1 && pool.H >= 1 && pool.W >= 1,
            ErrKind::io_other, "header carries invalid dims");

    pool.data.resize(size_t(pool.n_traj) * pool.traj_size());
    is.read(reinterpret_cast<char*>(pool.data.data()), std::streamsize(pool.data.size() * 4));
    if (size_t(is.gcount()) != pool.data.size() * 4)
        fail(ErrKind::io_truncated, "payload shorter than header promises");
    if (flags & 1) {
        pool.mask.resize(size_t(pool.H) * pool.W);
        is.read(reinterpret_cast<char*>(pool.mask.data()), std::streamsize(pool.mask.size()));
        if (size_t(is.gcount()) != pool.mask.size())
            fail(ErrKind::io_truncated, "mask shorter than header promises");
    }
    const uint32_t meta_len = get_u32(is);
    std::string meta(meta_len, '\0');
    is.read(meta.data(), std::streamsize(meta_len));
    if (size_t(is.gcount()) != meta_len)
        fail(ErrKind::io_truncated, "meta blob shorter than its length prefix");
    pool.meta = nlohmann::json::parse(meta, nullptr, /*allow_exceptions=*/false);
    if (pool.meta.is_discarded()) fail(ErrKind::io_other, "meta blob is not valid JSON");

    for (float v : pool.data)
        if (!std::isfinite(v)) fail(ErrKind::io_non_finite, "payload contains non-finite values");
    return pool;
}

}  // namespace sake
