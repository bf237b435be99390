#include "sake/trajstore.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "sake/rng.hpp"

using namespace sake;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("linear generator: zero coefficients give i.i.d. Gaussian data") {
    LinearSystemSpec spec;
    spec.dim = 1;
    spec.true_lag = 1;
    spec.n_traj = 50;
    spec.T = 200;
    spec.noise_sigma = 1.0;
    spec.coef_scale = 0.0;
    spec.seed = 7;
    TrajectoryPool pool = generate_linear_lag_system(spec);
    pool.validate();

    double mean = 0.0, var = 0.0, lag1 = 0.0;
    long n = 0, npairs = 0;
    for (int traj = 0; traj < pool.n_traj; ++traj) {
        for (int t = 0; t < pool.T; ++t) {
            mean += pool.at(traj, t, 0, 0, 0);
            ++n;
        }
    }
    mean /= double(n);
    for (int traj = 0; traj < pool.n_traj; ++traj) {
        for (int t = 0; t < pool.T; ++t) {
            const double x = pool.at(traj, t, 0, 0, 0) - mean;
            var += x * x;
            if (t + 1 < pool.T) {
                lag1 += x * (pool.at(traj, t + 1, 0, 0, 0) - mean);
                ++npairs;
            }
        }
    }
    var /= double(n);
    lag1 /= double(npairs);
    CHECK(std::abs(mean) < 0.05);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
    CHECK(std::abs(lag1 / var) < 0.05);  // no temporal structure
}

TEST_CASE("linear generator: residual curve knees at the true lag") {
    // Independent oracle: plain least-squares VAR(L) for L=1..8.
    LinearSystemSpec spec;
    spec.dim = 4;
    spec.true_lag = 3;
    spec.n_traj = 40;
    spec.T = 80;
    spec.noise_sigma = 0.05;
    spec.seed = 0;
    TrajectoryPool pool = generate_linear_lag_system(spec);
    CHECK(pool.meta["params"]["true_lag"] == 3);

    SplitPool split = split_pool(pool, {0.8, 0.2, 0.0}, 1);
    std::vector<double> risk;
    for (int L = 1; L <= 8; ++L)
        risk.push_back(testutil::var_ls_val_mse(split.train, split.val, L));

    CHECK(risk[0] > risk[1]);
    CHECK(risk[1] > risk[2]);
    // Sharp drop up to L=3, then flat.
    CHECK(risk[1] > 1.5 * risk[2]);
    for (size_t i = 3; i < risk.size(); ++i)
        CHECK(risk[i] == doctest::Approx(risk[2]).epsilon(0.10));
}

TEST_CASE("linear generator: noiseless system is exactly representable") {
    LinearSystemSpec spec;
    spec.dim = 3;
    spec.true_lag = 2;
    spec.n_traj = 12;
    spec.T = 60;
    spec.noise_sigma = 0.0;
    spec.seed = 3;
    TrajectoryPool pool = generate_linear_lag_system(spec);
    SplitPool split = split_pool(pool, {0.75, 0.25, 0.0}, 0);
    CHECK(testutil::var_ls_val_mse(split.train, split.val, spec.true_lag) < 1e-10);
}

TEST_CASE("linear generator: unsatisfiable stability fails with named parameters") {
    LinearSystemSpec spec;
    spec.dim = 6;
    spec.true_lag = 4;
    spec.coef_scale = 50.0;  // radius far above 1 in every draw
    spec.stability_margin = 0.5;
    CHECK_THROWS_WITH_AS(generate_linear_lag_system(spec),
                         doctest::Contains("true_lag=4"), Error);
}

TEST_CASE("diffusion2d: constant field is a fixed point of the step") {
    std::vector<double> field(16 * 16, 3.25);
    std::vector<double> before = field;
    diffusion2d_step(field, 16, 0.2);
    CHECK(field == before);
}

TEST_CASE("diffusion2d: zero-flux sum conservation and determinism") {
    Diffusion2dSpec spec;
    spec.grid = 16;
    spec.n_traj = 8;
    spec.T = 32;
    spec.diffusivity = 0.2;
    spec.seed = 0;
    TrajectoryPool pool = generate_diffusion2d(spec);
    pool.validate();

    for (int traj = 0; traj < pool.n_traj; ++traj) {
        double first = 0.0;
        for (int s = 0; s < spec.grid * spec.grid; ++s) first += pool.frame(traj, 0)[s];
        for (int t = 1; t < pool.T; ++t) {
            double sum = 0.0;
            for (int s = 0; s < spec.grid * spec.grid; ++s) sum += pool.frame(traj, t)[s];
            CHECK(sum == doctest::Approx(first).epsilon(1e-6));
        }
    }

    TrajectoryPool again = generate_diffusion2d(spec);
    CHECK(pool.data == again.data);
    CHECK(pool.meta == again.meta);
}

TEST_CASE("diffusion2d: stability violation is a configuration error") {
    Diffusion2dSpec spec;
    spec.diffusivity = 0.3;  // courant 0.3 > 0.25
    CHECK_THROWS_AS(generate_diffusion2d(spec), Error);
}

TEST_CASE("split_pool: floor allocation with remainder to train") {
    LinearSystemSpec spec;
    spec.n_traj = 10;
    spec.T = 10;
    spec.dim = 1;
    spec.true_lag = 1;
    TrajectoryPool pool = generate_linear_lag_system(spec);

    SplitPool s = split_pool(pool, {0.8, 0.1, 0.1}, 42);
    CHECK(s.train_idx.size() == 8);
    CHECK(s.val_idx.size() == 1);
    CHECK(s.test_idx.size() == 1);

    SplitPool whole = split_pool(pool, {1.0, 0.0, 0.0}, 42);
    CHECK(whole.train_idx.size() == 10);
    CHECK(whole.val_idx.empty());
    CHECK(whole.test_idx.empty());

    SplitPool rerun = split_pool(pool, {0.8, 0.1, 0.1}, 42);
    CHECK(rerun.train_idx == s.train_idx);
    CHECK(rerun.val_idx == s.val_idx);
    CHECK(rerun.test_idx == s.test_idx);
}

TEST_CASE("split_pool: partition property over random fractions and seeds") {
    LinearSystemSpec spec;
    spec.dim = 1;
    spec.true_lag = 1;
    spec.T = 8;
    RngStream rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        spec.n_traj = rng.uniform_int(3, 25);
        spec.seed = uint64_t(trial);
        TrajectoryPool pool = generate_linear_lag_system(spec);
        double a = rng.uniform(), b = rng.uniform() * (1.0 - a);
        SplitPool s = split_pool(pool, {a, b, 1.0 - a - b}, uint64_t(trial * 13));

        std::set<int> seen;
        for (const auto* idx : {&s.train_idx, &s.val_idx, &s.test_idx})
            for (int i : *idx) CHECK(seen.insert(i).second);  // pairwise disjoint
        CHECK(int(seen.size()) == pool.n_traj);               // exhaustive
    }
}

TEST_CASE("split_pool: too few trajectories for the nonzero fractions") {
    LinearSystemSpec spec;
    spec.n_traj = 2;
    spec.T = 8;
    spec.dim = 1;
    spec.true_lag = 1;
    TrajectoryPool pool = generate_linear_lag_system(spec);
    CHECK_THROWS_AS(split_pool(pool, {0.5, 0.25, 0.25}, 0), Error);
}

TEST_CASE("perturb: identity and zero-sigma noise return exact copies") {
    LinearSystemSpec spec;
    spec.n_traj = 4;
    spec.T = 12;
    TrajectoryPool pool = generate_linear_lag_system(spec);

    PerturbSpec id;
    id.kind = PerturbKind::identity;
    CHECK(perturb(pool, id).data == pool.data);

    PerturbSpec zero;
    zero.kind = PerturbKind::gaussian_noise;
    zero.sigma = 0.0;
    CHECK(perturb(pool, zero).data == pool.data);
}

TEST_CASE("perturb: noise mean squared difference grows with sigma") {
    Diffusion2dSpec dspec;
    dspec.grid = 8;
    dspec.n_traj = 4;
    dspec.T = 16;
    TrajectoryPool pool = generate_diffusion2d(dspec);

    double prev = -1.0;
    for (double sigma : {0.0, 0.01, 0.05, 0.1}) {
        PerturbSpec ps;
        ps.kind = PerturbKind::gaussian_noise;
        ps.sigma = sigma;
        ps.seed = 5;
        TrajectoryPool noisy = perturb(pool, ps);
        double msd = 0.0;
        for (size_t i = 0; i < pool.data.size(); ++i) {
            const double d = double(noisy.data[i]) - double(pool.data[i]);
            msd += d * d;
        }
        msd /= double(pool.data.size());
        CHECK(msd > prev);
        prev = msd;
    }
}

TEST_CASE("perturb: downsample is lossless on blockwise-constant fields") {
    TrajectoryPool pool;
    pool.n_traj = 2;
    pool.T = 3;
    pool.C = 1;
    pool.H = 8;
    pool.W = 8;
    pool.data.resize(size_t(pool.n_traj) * pool.traj_size());
    RngStream rng(11);
    for (int traj = 0; traj < pool.n_traj; ++traj)
        for (int t = 0; t < pool.T; ++t)
            for (int by = 0; by < 4; ++by)
                for (int bx = 0; bx < 4; ++bx) {
                    const float v = float(rng.normal());
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            pool.at(traj, t, 0, by * 2 + dy, bx * 2 + dx) = v;
                }
    pool.meta = {{"generator", "blocks"}};

    PerturbSpec ds;
    ds.kind = PerturbKind::downsample;
    ds.factor = 2;
    TrajectoryPool small = perturb(pool, ds);
    REQUIRE(small.H == 4);
    REQUIRE(small.W == 4);
    for (int traj = 0; traj < pool.n_traj; ++traj)
        for (int t = 0; t < pool.T; ++t)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x)
                    CHECK(small.at(traj, t, 0, y, x) ==
                          doctest::Approx(pool.at(traj, t, 0, y * 2, x * 2)).epsilon(1e-7));
}

TEST_CASE("perturb: non-divisible downsample is a shape error") {
    Diffusion2dSpec dspec;
    dspec.grid = 6;
    dspec.n_traj = 1;
    dspec.T = 4;
    TrajectoryPool pool = generate_diffusion2d(dspec);
    PerturbSpec ds;
    ds.kind = PerturbKind::downsample;
    ds.factor = 4;
    CHECK_THROWS_AS(perturb(pool, ds), Error);
}

TEST_CASE("perturb: random_mask zeroes a fixed site set across time and channels") {
    LinearSystemSpec spec;
    spec.dim = 2;
    spec.n_traj = 3;
    spec.T = 10;
    TrajectoryPool pool = generate_linear_lag_system(spec);
    // Give it spatial extent by reshaping a diffusion pool instead.
    Diffusion2dSpec dspec;
    dspec.grid = 10;
    dspec.n_traj = 2;
    dspec.T = 6;
    pool = generate_diffusion2d(dspec);

    PerturbSpec ms;
    ms.kind = PerturbKind::random_mask;
    ms.mask_fraction = 0.25;
    ms.seed = 3;
    TrajectoryPool masked = perturb(pool, ms);
    REQUIRE(masked.mask.size() == 100);
    int count = 0;
    for (auto m : masked.mask) count += m;
    CHECK(count == 25);
    for (int traj = 0; traj < pool.n_traj; ++traj)
        for (int t = 0; t < pool.T; ++t)
            for (int s = 0; s < 100; ++s) {
                const float v = masked.frame(traj, t)[s];
                if (masked.mask[size_t(s)])
                    CHECK(v == 0.0f);
                else
                    CHECK(v == pool.frame(traj, t)[s]);
            }
}

TEST_CASE("pool file: round-trip is bit-exact, including masks and meta") {
    RngStream rng(2024);
    const fs::path path = temp_file("sake_roundtrip.bin");
    for (int trial = 0; trial < 25; ++trial) {
        TrajectoryPool pool = testutil::random_pool(rng, trial % 2 == 1);
        write_pool(pool, path);
        TrajectoryPool back = read_pool(path);
        CHECK(back.n_traj == pool.n_traj);
        CHECK(back.data == pool.data);
        CHECK(back.mask == pool.mask);
        CHECK(back.meta == pool.meta);
    }
    fs::remove(path);
}

TEST_CASE("pool file: corrupted inputs raise distinct named errors") {
    RngStream rng(5);
    TrajectoryPool pool = testutil::random_pool(rng, false);
    const fs::path path = temp_file("sake_corrupt.bin");
    write_pool(pool, path);

    auto clobber = [&](size_t offset, char value) {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(std::streamoff(offset));
        f.write(&value, 1);
    };

    SUBCASE("bad magic") {
        clobber(0, 'X');
        CHECK_THROWS_WITH_AS(read_pool(path), doctest::Contains("bad magic"), Error);
    }
    SUBCASE("version mismatch") {
        clobber(4, 9);
        CHECK_THROWS_WITH_AS(read_pool(path), doctest::Contains("version"), Error);
    }
    SUBCASE("truncated payload") {
        const auto size = fs::file_size(path);
        fs::resize_file(path, size - 5);
        CHECK_THROWS_WITH_AS(read_pool(path), doctest::Contains("truncated"), Error);
    }
    fs::remove(path);
}

TEST_CASE("generators are deterministic functions of their spec") {
    LinearSystemSpec spec;
    spec.seed = 17;
    TrajectoryPool a = generate_linear_lag_system(spec);
    TrajectoryPool b = generate_linear_lag_system(spec);
    CHECK(a.data == b.data);

    PerturbSpec ps;
    ps.kind = PerturbKind::gaussian_noise;
    ps.sigma = 0.05;
    ps.seed = 9;
    CHECK(perturb(a, ps).data == perturb(b, ps).data);
}
