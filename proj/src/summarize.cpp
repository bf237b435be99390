#include "sake/summarize.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sake/rng.hpp"

namespace sake {

namespace {

constexpr double kScaleFloor = 1e-8;

}  // namespace

SummaryMethod summary_method_from_string(const std::string& s) {
    if (s == "pca") return SummaryMethod::pca;
    if (s == "svd") return SummaryMethod::svd;
    if (s == "random_projection") return SummaryMethod::random_projection;
    if (s == "identity") return SummaryMethod::identity;
    fail(ErrKind::config, "unknown summary method '" + s + "'");
}

std::string to_string(SummaryMethod m) {
    switch (m) {
        case SummaryMethod::pca: return "pca";
        case SummaryMethod::svd: return "svd";
        case SummaryMethod::random_projection: return "random_projection";
        case SummaryMethod::identity: return "identity";
    }
    return "?";
}

void ProjectorSpec::validate() const {
    require(max_components >= 1, ErrKind::config, "max_components must be >= 1");
    require(fit_samples >= max_components, ErrKind::config,
            "fit_samples must be >= max_components");
    require(variance_target > 0.0 && variance_target <= 1.0, ErrKind::config,
            "variance_target must lie in (0,1]");
    require(coarsen_factor >= 1, ErrKind::config, "coarsen_factor must be >= 1");
}

uint64_t ProjectorSpec::hash() const {
    uint64_t h = mix64(uint64_t(method) + 0x51);
    h = hash_combine(h, uint64_t(max_components));
    h = hash_combine(h, uint64_t(fit_samples));
    h = hash_combine(h, uint64_t(coarsen_factor));
    h = hash_combine(h, uint64_t(variance_target * 1e9));
    h = hash_combine(h, uint64_t(normalize_first));
    h = hash_combine(h, seed);
    return h;
}

namespace {

// Flattened, block-averaged feature vector of one frame.
void coarsen_frame(const TrajectoryPool& pool, int traj, int t, int factor, double* out) {
    const int h = pool.H / factor, w = pool.W / factor;
    const double inv = 1.0 / (factor * factor);
    size_t o = 0;
    for (int c = 0; c < pool.C; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        acc += pool.at(traj, t, c, y * factor + dy, x * factor + dx);
                out[o++] = acc * inv;
            }
}

// Block-average an already flattened [c][y][x] feature vector.
Eigen::VectorXd coarsen_features(const Eigen::VectorXd& full, int channels, int height,
                                 int width, int factor) {
    const int h = height / factor, w = width / factor;
    const double inv = 1.0 / (factor * factor);
    Eigen::VectorXd out(channels * h * w);
    size_t o = 0;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        acc += full[(size_t(c) * height + size_t(y) * factor + dy) * width +
                                    size_t(x) * factor + dx];
                out[long(o++)] = acc * inv;
            }
    return out;
}

int feature_dim(const TrajectoryPool& pool, int factor) {
    require(pool.H % factor == 0 && pool.W % factor == 0, ErrKind::shape,
            "coarsen_factor must divide H and W");
    return pool.C * (pool.H / factor) * (pool.W / factor);
}

// Make the largest-magnitude entry of each basis row positive, so pca and
// randomized svd agree up to the sign convention rather than up to sign.
void canonicalize_rows(Eigen::MatrixXd& basis) {
    for (int r = 0; r < basis.rows(); ++r) {
        int arg = 0;
        basis.row(r).cwiseAbs().maxCoeff(&arg);
        if (basis(r, arg) < 0.0) basis.row(r) *= -1.0;
    }
}

struct Spectrum {
    Eigen::MatrixXd components;   // rows, descending variance
    Eigen::VectorXd variances;    // matching eigenvalues
    double total_variance = 0.0;  // over all d directions
};

Spectrum exact_pca(const Eigen::MatrixXd& samples) {
    const Eigen::MatrixXd cov =
        samples.transpose() * samples / double(samples.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const int d = int(cov.rows());
    Spectrum s;
    s.components.resize(d, d);
    s.variances.resize(d);
    for (int i = 0; i < d; ++i) {  // descending
        s.components.row(i) = eig.eigenvectors().col(d - 1 - i).transpose();
        s.variances[i] = std::max(0.0, eig.eigenvalues()[d - 1 - i]);
    }
    s.total_variance = s.variances.sum();
    return s;
}

// Halko-style randomized range finder with two power iterations.
Spectrum randomized_svd(const Eigen::MatrixXd& samples, int rank, uint64_t seed) {
    const int n = int(samples.rows()), d = int(samples.cols());
    const int r = std::min({rank + 8, n, d});
    RngStream rng = RngStream(seed).derive(0x55D5);
    Eigen::MatrixXd omega(d, r);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < r; ++j) omega(i, j) = rng.normal();

    Eigen::MatrixXd y = samples * omega;
    for (int it = 0; it < 2; ++it) {
        y = Eigen::HouseholderQR<Eigen::MatrixXd>(y).householderQ() *
            Eigen::MatrixXd::Identity(n, r);
        y = samples * (samples.transpose() * y);
    }
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(y).householderQ() *
                              Eigen::MatrixXd::Identity(n, r);
    const Eigen::MatrixXd b = q.transpose() * samples;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinV);

    Spectrum s;
    const int got = int(svd.singularValues().size());
    s.components = svd.matrixV().transpose().topRows(got);
    s.variances.resize(got);
    for (int i = 0; i < got; ++i)
        s.variances[i] = svd.singularValues()[i] * svd.singularValues()[i] / double(n);
    s.total_variance = samples.squaredNorm() / double(n);
    return s;
}

int pick_components(const Spectrum& s, double variance_target, int max_components,
                    double* explained_out) {
    const double total = std::max(s.total_variance, 1e-300);
    const int limit = std::min<int>(max_components, int(s.variances.size()));
    double cum = 0.0;
    int k = limit;
    for (int i = 0; i < limit; ++i) {
        cum += s.variances[i];
        if (cum / total >= variance_target) {
            k = i + 1;
            break;
        }
    }
    double expl = 0.0;
    for (int i = 0; i < k; ++i) expl += s.variances[i];
    *explained_out = expl / total;
    return k;
}

}  // namespace

Projector fit_projector(const TrajectoryPool& pool, const ProjectorSpec& spec) {
    spec.validate();
    require(pool.n_traj >= 1 && pool.T >= 1, ErrKind::config, "pool must be nonempty");
    const int d = feature_dim(pool, spec.coarsen_factor);
    const int d_norm = spec.normalize_first ? pool.C * pool.H * pool.W : d;

    const long total_frames = long(pool.n_traj) * pool.T;
    const int n = int(std::min<long>(spec.fit_samples, total_frames));
    RngStream rng = RngStream(spec.seed).derive(0xF17);
    std::vector<int> picks = rng.sample_without_replacement(int(total_frames), n);

    // Raw rows at the resolution the normalization applies to.
    Eigen::MatrixXd raw(n, d_norm);
    std::vector<double> row(static_cast<size_t>(d));
    for (int i = 0; i < n; ++i) {
        const int traj = picks[size_t(i)] / pool.T;
        const int t = picks[size_t(i)] % pool.T;
        if (spec.normalize_first) {
            const float* frame = pool.frame(traj, t);
            for (int j = 0; j < d_norm; ++j) raw(i, j) = double(frame[j]);
        } else {
            coarsen_frame(pool, traj, t, spec.coarsen_factor, row.data());
            for (int j = 0; j < d; ++j) raw(i, j) = row[size_t(j)];
        }
    }

    Projector proj;
    proj.method = spec.method;
    proj.coarsen_factor = spec.coarsen_factor;
    proj.normalize_first = spec.normalize_first;
    proj.spec_hash = spec.hash();
    proj.mean = raw.colwise().mean();
    raw.rowwise() -= proj.mean.transpose();

    Eigen::VectorXd std_dev = (raw.array().square().colwise().sum() / double(n)).sqrt();
    proj.degenerate = (std_dev.maxCoeff() < kScaleFloor);
    proj.scale = std_dev.cwiseMax(kScaleFloor);
    raw.array().rowwise() /= proj.scale.transpose().array();

    Eigen::MatrixXd samples;
    if (spec.normalize_first && spec.coarsen_factor > 1) {
        samples.resize(n, d);
        for (int i = 0; i < n; ++i)
            samples.row(i) = coarsen_features(raw.row(i).transpose(), pool.C, pool.H,
                                              pool.W, spec.coarsen_factor)
                                 .transpose();
    } else {
        samples = std::move(raw);
    }

    switch (spec.method) {
        case SummaryMethod::pca: {
            Spectrum s = exact_pca(samples);
            proj.k = pick_components(s, spec.variance_target, spec.max_components,
                                     &proj.explained);
            proj.basis = s.components.topRows(proj.k);
            canonicalize_rows(proj.basis);
            break;
        }
        case SummaryMethod::svd: {
            Spectrum s = randomized_svd(samples, spec.max_components, spec.seed);
            proj.k = pick_components(s, spec.variance_target, spec.max_components,
                                     &proj.explained);
            proj.basis = s.components.topRows(proj.k);
            canonicalize_rows(proj.basis);
            break;
        }
        case SummaryMethod::random_projection: {
            proj.k = std::min(spec.max_components, d);
            proj.basis.resize(proj.k, d);
            RngStream brng = RngStream(spec.seed).derive(0xBA5E);
            const double inv_sqrt_k = 1.0 / std::sqrt(double(proj.k));
            for (int i = 0; i < proj.k; ++i)
                for (int j = 0; j < d; ++j) proj.basis(i, j) = inv_sqrt_k * brng.normal();
            break;
        }
        case SummaryMethod::identity: {
            proj.k = d;
            proj.basis = Eigen::MatrixXd::Identity(d, d);
            proj.explained = 1.0;
            break;
        }
    }
    if (proj.degenerate) {
        // Zero-variance input: keep a single flat component, flag it.
        proj.k = 1;
        proj.basis = proj.basis.topRows(1);
        proj.explained = 1.0;
    }
    return proj;
}

SummarySet project(const Projector& proj, const TrajectoryPool& pool) {
    const int d = feature_dim(pool, proj.coarsen_factor);
    const int d_norm = proj.normalize_first ? pool.C * pool.H * pool.W : d;
    require(d_norm == proj.input_dim() && d == int(proj.basis.cols()), ErrKind::shape,
            "pool feature dim " + std::to_string(d_norm) + " does not match projector dim " +
                std::to_string(proj.input_dim()));

    SummarySet out;
    out.k = proj.k;
    out.provenance = proj.spec_hash;
    out.traj.resize(size_t(pool.n_traj));
    std::vector<double> row(static_cast<size_t>(d));
    Eigen::VectorXd features(d_norm);
    for (int traj = 0; traj < pool.n_traj; ++traj) {
        Eigen::MatrixXd& m = out.traj[size_t(traj)];
        m.resize(pool.T, proj.k);
        for (int t = 0; t < pool.T; ++t) {
            if (proj.normalize_first) {
                const float* frame = pool.frame(traj, t);
                for (int j = 0; j < d_norm; ++j) features[j] = double(frame[j]);
                Eigen::VectorXd z = (features - proj.mean).cwiseQuotient(proj.scale);
                if (proj.coarsen_factor > 1)
                    z = coarsen_features(z, pool.C, pool.H, pool.W, proj.coarsen_factor);
                m.row(t) = (proj.basis * z).transpose();
            } else {
                coarsen_frame(pool, traj, t, proj.coarsen_factor, row.data());
                for (int j = 0; j < d; ++j) features[j] = row[size_t(j)];
                m.row(t) = (proj.basis * ((features - proj.mean).cwiseQuotient(proj.scale)))
                               .transpose();
            }
        }
    }
    return out;
}

// Record layout: "SAKP" | u8 version | u8 method | u8 degenerate | u8 normalize_first |
// u32 payload length | payload (u32 coarsen, u32 k, u32 d_norm, u32 d_basis,
// f64 explained, u64 spec_hash, then mean/scale/basis as f64 LE).
void write_projector(const Projector& proj, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), ErrKind::io_other, "cannot open '" + path.string() + "' for writing");
    const int d_norm = proj.input_dim();
    const int d_basis = int(proj.basis.cols());
    const uint32_t payload =
        uint32_t(4 * 4 + 8 + 8 + 8 * (size_t(d_norm) * 2 + size_t(proj.k) * d_basis));

    os.write("SAKP", 4);
    const char head[4] = {char(kFormatVersion), char(proj.method), char(proj.degenerate),
                          char(proj.normalize_first)};
    os.write(head, 4);
    auto put32 = [&os](uint32_t v) {
        const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                           char((v >> 24) & 0xff)};
        os.write(b, 4);
    };
    put32(payload);
    put32(uint32_t(proj.coarsen_factor));
    put32(uint32_t(proj.k));
    put32(uint32_t(d_norm));
    put32(uint32_t(d_basis));
    os.write(reinterpret_cast<const char*>(&proj.explained), 8);
    os.write(reinterpret_cast<const char*>(&proj.spec_hash), 8);
    os.write(reinterpret_cast<const char*>(proj.mean.data()), 8 * d_norm);
    os.write(reinterpret_cast<const char*>(proj.scale.data()), 8 * d_norm);
    os.write(reinterpret_cast<const char*>(proj.basis.data()),
             std::streamsize(8 * size_t(proj.k) * d_basis));
    require(bool(os), ErrKind::io_other, "write failed for '" + path.string() + "'");
}

Projector read_projector(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), ErrKind::io_other, "cannot open '" + path.string() + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "SAKP")
        fail(ErrKind::io_bad_magic, "'" + path.string() + "' is not a projector file");
    char head[4];
    is.read(head, 4);
    if (!is) fail(ErrKind::io_truncated, "file ends inside header");
    if (head[0] != kFormatVersion)
        fail(ErrKind::io_bad_version, "unsupported version " + std::to_string(int(head[0])));

    auto get32 = [&is]() {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) fail(ErrKind::io_truncated, "file ends inside header");
        return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
               uint32_t(b[3]) << 24;
    };
    const uint32_t payload = get32();

    Projector proj;
    proj.method = SummaryMethod(head[1]);
    proj.degenerate = head[2] != 0;
    proj.normalize_first = head[3] != 0;
    proj.coarsen_factor = int(get32());
    proj.k = int(get32());
    const int d_norm = int(get32());
    const int d_basis = int(get32());
    require(proj.k >= 1 && d_norm >= 1 && d_basis >= 1, ErrKind::io_other,
            "header carries invalid dims");
    const uint32_t expect =
        uint32_t(4 * 4 + 8 + 8 + 8 * (size_t(d_norm) * 2 + size_t(proj.k) * d_basis));
    if (payload != expect) fail(ErrKind::io_truncated, "payload length mismatch");

    is.read(reinterpret_cast<char*>(&proj.explained), 8);
    is.read(reinterpret_cast<char*>(&proj.spec_hash), 8);
    proj.mean.resize(d_norm);
    proj.scale.resize(d_norm);
    proj.basis.resize(proj.k, d_basis);
    is.read(reinterpret_cast<char*>(proj.mean.data()), 8 * d_norm);
    is.read(reinterpret_cast<char*>(proj.scale.data()), 8 * d_norm);
    is.read(reinterpret_cast<char*>(proj.basis.data()),
            std::streamsize(8 * size_t(proj.k) * d_basis));
    if (!is) fail(ErrKind::io_truncated, "payload shorter than header promises");
    return proj;
}

}  // namespace sake
