#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "relcirc/errors.hpp"
#include "relcirc/varpart.hpp"
#include "relcirc/varpart_io.hpp"

using namespace relcirc;
using namespace relcirc::varpart;

namespace {

std::vector<std::string> random_labels(std::size_t n, int levels, std::mt19937& gen) {
    std::uniform_int_distribution<int> d(0, levels - 1);
    std::vector<std::string> out(n);
    // Guarantee every level appears at least once.
    for (std::size_t i = 0; i < n; ++i) out[i] = std::string(1, char('a' + (i < std::size_t(levels) ? int(i) : d(gen))));
    return out;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937& gen) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = nd(gen);
    return m;
}

// 2 x 3 fully crossed, each cell repeated `reps` times.
FactorDesign balanced_design(int reps) {
    std::vector<std::string> a, b;
    for (int r = 0; r < reps; ++r)
        for (const char* x : {"p", "q"})
            for (const char* y : {"u", "v", "w"}) {
                a.emplace_back(x);
                b.emplace_back(y);
            }
    FactorDesign d;
    d.add("A", a);
    d.add("B", b);
    return d;
}

}  // namespace

TEST_CASE("centered one-hot examples") {
    const std::vector<std::string> ab{"a", "a", "b", "b"};
    const auto z = onehot_centered(std::span<const std::string>(ab)).z;
    Eigen::MatrixXd want(4, 2);
    want << 0.5, -0.5, 0.5, -0.5, -0.5, 0.5, -0.5, 0.5;
    CHECK((z - want).cwiseAbs().maxCoeff() == 0.0);

    const std::vector<std::string> abc{"c", "a", "b"};
    const auto z3 = onehot_centered(std::span<const std::string>(abc)).z;
    Eigen::MatrixXd j3 = Eigen::MatrixXd::Identity(3, 3) - Eigen::MatrixXd::Constant(3, 3, 1.0 / 3);
    // Rows follow the samples, columns the sorted levels a, b, c.
    Eigen::MatrixXd want3(3, 3);
    want3 << j3.row(2), j3.row(0), j3.row(1);
    CHECK((z3 - want3).cwiseAbs().maxCoeff() < 1e-15);

    const std::vector<std::string> same{"x", "x", "x"};
    const auto deg = onehot_centered(std::span<const std::string>(same));
    CHECK(deg.degenerate);
    CHECK(deg.z.isZero());
    const std::vector<std::string> single{"x"};
    CHECK_THROWS_AS(onehot_centered(std::span<const std::string>(single)), InputError);
}

TEST_CASE("balanced crossed factors have orthogonal design blocks") {
    const auto d = balanced_design(2);
    const auto z = design_matrix(d);
    const Eigen::MatrixXd cross = z.leftCols(2).transpose() * z.rightCols(3);
    CHECK(cross.cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::MatrixXd za = oracle::centered_onehot(d[0].labels);
    CHECK(((za.transpose() * za) - z.leftCols(2).transpose() * z.leftCols(2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("classical MDS of Euclidean distances reproduces the Euclidean Gram") {
    std::mt19937 gen(1);
    const auto x = random_matrix(6, 3, gen);
    const auto ge = gram_euclidean(x);
    const auto gm = gram_mds(oracle::euclidean_distances(x));
    CHECK((ge.a - gm.a).cwiseAbs().maxCoeff() < 1e-8);
    double ss = 0;
    const Eigen::RowVectorXd mean = x.colwise().mean();
    for (int i = 0; i < 6; ++i) ss += (x.row(i) - mean).squaredNorm();
    CHECK(oracle::rel_err(ge.a.trace(), ss) < 1e-12);
}

TEST_CASE("gram input validation") {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
    d(0, 1) = 1;
    CHECK_THROWS_AS(gram_mds(d), InputError);
    CHECK_THROWS_AS(gram_mds(Eigen::MatrixXd::Zero(2, 3)), InputError);
    Eigen::MatrixXd neg = Eigen::MatrixXd::Zero(2, 2);
    neg(0, 1) = neg(1, 0) = -1;
    CHECK_THROWS_AS(gram_mds(neg), InputError);
}

TEST_CASE("identical rows give a zero Gram and a degenerate partition") {
    const Eigen::MatrixXd x = Eigen::RowVector3d(1, 2, 3).replicate(4, 1);
    const auto g = gram_euclidean(x);
    CHECK(g.a.isZero());
    FactorDesign d;
    d.add("f", {"a", "a", "b", "b"});
    CHECK_THROWS_AS(partition(g, d), DegenerateDataError);
}

TEST_CASE("projector axioms and special cases") {
    Eigen::MatrixXd e = Eigen::MatrixXd::Identity(5, 2);
    const auto pe = projector(e).matrix();
    Eigen::MatrixXd want = Eigen::MatrixXd::Zero(5, 5);
    want(0, 0) = want(1, 1) = 1;
    CHECK((pe - want).cwiseAbs().maxCoeff() < 1e-12);

    std::mt19937 gen(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto z = random_matrix(9, 4, gen);
        const auto p = projector(z);
        const Eigen::MatrixXd m = p.matrix();
        CHECK(p.rank == 4);
        CHECK((m * m - m).cwiseAbs().maxCoeff() < 1e-8);
        CHECK((m - m.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((m - oracle::pinv_projector(z, 9)).cwiseAbs().maxCoeff() < 1e-8);

        Eigen::MatrixXd dup(9, 5);
        dup << z, z.col(1);
        const auto pd = projector(dup);
        CHECK(pd.rank == 4);
        CHECK((pd.matrix() - m).cwiseAbs().maxCoeff() < 1e-8);
    }
    CHECK(projector(Eigen::MatrixXd::Zero(4, 3)).rank == 0);
    CHECK(projector(Eigen::MatrixXd::Zero(4, 3)).matrix().isZero());
}

TEST_CASE("trace through the projector basis equals the full trace") {
    std::mt19937 gen(3);
    const auto x = random_matrix(10, 4, gen);
    const auto a = gram_euclidean(x).a;
    const auto z = random_matrix(10, 3, gen);
    const auto p = projector(z);
    CHECK(oracle::rel_err(trace_projected(a, p), (a * p.matrix()).trace()) < 1e-12);
}

TEST_CASE("a noise-free single factor fits perfectly") {
    std::mt19937 gen(4);
    const auto levels = random_matrix(3, 5, gen);
    std::vector<std::string> labels;
    Eigen::MatrixXd x(12, 5);
    for (int i = 0; i < 12; ++i) {
        labels.push_back(std::string(1, char('a' + i % 3)));
        x.row(i) = levels.row(i % 3);
    }
    FactorDesign d;
    d.add("f", labels);
    const auto r = partition(gram_euclidean(x), d);
    CHECK(r.r2_total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(r.ss_resid) < 1e-10 * r.ss_total);
    CHECK(r.rows[0].df_eff == 2);
    CHECK(r.rows[0].df_res == 12 - 1 - 2);
}

TEST_CASE("balanced orthogonal factors have equal marginal and partial shares") {
    std::mt19937 gen(5);
    const auto d = balanced_design(3);
    const auto x = random_matrix(18, 4, gen);
    const auto r = partition(gram_euclidean(x), d);
    for (const auto& row : r.rows) CHECK(row.r2_marg == doctest::Approx(row.r2_part).epsilon(1e-10));
    CHECK(r.rank == 3);
    CHECK(r.rows[0].df_res == 18 - 1 - 3);
}

TEST_CASE("partition matches the pseudoinverse oracle on random instances") {
    std::mt19937 gen(6);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 8 + trial % 7;
        const auto x = random_matrix(static_cast<Eigen::Index>(n), 3, gen);
        FactorDesign d;
        d.add("f1", random_labels(n, 2 + trial % 3, gen));
        d.add("f2", random_labels(n, 2 + (trial / 3) % 2, gen));
        const auto g = gram_euclidean(x);
        const auto r = partition(g, d);
        const auto o = oracle::partition(g.a, {d[0].labels, d[1].labels});
        CHECK(oracle::rel_err(r.ss_total, o.total) < 1e-10);
        CHECK(std::abs(r.ss_resid - o.resid) < 1e-8 * o.total);
        for (std::size_t f = 0; f < 2; ++f) {
            CHECK(std::abs(r.rows[f].ssr_marg - o.factors[f].marg) < 1e-8 * o.total);
            CHECK(std::abs(r.rows[f].ssr_part - o.factors[f].part) < 1e-8 * o.total);
            CHECK(r.rows[f].ssr_marg >= -1e-8);
            CHECK(r.rows[f].ssr_part >= -1e-8);
        }
        // tr(A P_all) + tr(A P_perp) = tr(A).
        CHECK(std::abs(r.ss_model + r.ss_resid - r.ss_total) <= 1e-10 * r.ss_total);
        // Direct tr(X_c^T P X_c).
        const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
        const Eigen::MatrixXd p = oracle::pinv_projector(design_matrix(d), static_cast<Eigen::Index>(n));
        CHECK(std::abs((xc.transpose() * p * xc).trace() - r.ss_model) < 1e-8 * r.ss_total);
    }
}

TEST_CASE("factor order in the design only permutes report rows") {
    std::mt19937 gen(7);
    const auto x = random_matrix(15, 3, gen);
    const auto l1 = random_labels(15, 3, gen), l2 = random_labels(15, 2, gen), l3 = random_labels(15, 4, gen);
    FactorDesign fwd, rev;
    fwd.add("a", l1);
    fwd.add("b", l2);
    fwd.add("c", l3);
    rev.add("c", l3);
    rev.add("a", l1);
    rev.add("b", l2);
    const auto g = gram_euclidean(x);
    const auto rf = partition(g, fwd), rr = partition(g, rev);
    CHECK(rf.ss_resid == doctest::Approx(rr.ss_resid).epsilon(1e-10));
    for (std::size_t f = 0; f < 3; ++f) {
        const auto& a = rf.rows[f];
        const auto& b = rr.rows[(f + 1) % 3];
        CHECK(a.feature == b.feature);
        CHECK(a.ssr_part == doctest::Approx(b.ssr_part).epsilon(1e-10));
        CHECK(a.ssr_marg == doctest::Approx(b.ssr_marg).epsilon(1e-10));
    }
}

TEST_CASE("permutation p-values") {
    std::mt19937 gen(8);
    const std::size_t n = 24;
    std::vector<std::string> strong(n), noise = random_labels(n, 3, gen);
    Eigen::MatrixXd x = 0.05 * random_matrix(static_cast<Eigen::Index>(n), 3, gen);
    for (std::size_t i = 0; i < n; ++i) {
        strong[i] = i % 2 ? "hi" : "lo";
        x(static_cast<Eigen::Index>(i), 0) += i % 2 ? 5.0 : -5.0;
    }
    FactorDesign d;
    d.add("strong", strong);
    d.add("noise", noise);
    const auto g = gram_euclidean(x);
    const double p_strong = permutation_test(g, d, 0, 100, 0);
    CHECK(p_strong == doctest::Approx(1.0 / 101));
    const double p_noise = permutation_test(g, d, 1, 100, 0);
    CHECK(p_noise >= 1.0 / 101);
    CHECK(p_noise <= 1.0);
    CHECK(permutation_test(g, d, 1, 100, 0) == p_noise);
    CHECK_THROWS_AS(permutation_test(g, d, 0, 0, 0), InputError);

    PermutationOptions perm;
    perm.n_perm = 50;
    const auto r = partition(g, d, perm);
    CHECK(r.rows[0].p_perm == doctest::Approx(1.0 / 51));
}

TEST_CASE("effect vectors recover a synthetic additive model") {
    std::mt19937 gen(9);
    const auto d = balanced_design(2);
    Eigen::MatrixXd beta_a = random_matrix(2, 6, gen), beta_b = random_matrix(3, 6, gen);
    beta_a.rowwise() -= beta_a.colwise().mean();
    beta_b.rowwise() -= beta_b.colwise().mean();
    const Eigen::RowVectorXd mu = random_matrix(1, 6, gen);
    Eigen::MatrixXd x(12, 6);
    for (int i = 0; i < 12; ++i) {
        const int la = d[0].labels[i] == "p" ? 0 : 1;
        const int lb = d[1].labels[i][0] - 'u';
        x.row(i) = mu + beta_a.row(la) + beta_b.row(lb);
    }
    const auto fx = effect_vectors(x, d);
    CHECK((fx.mean.transpose() - mu).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((fx.factor("A").vectors - beta_a).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((fx.factor("B").vectors - beta_b).cwiseAbs().maxCoeff() < 1e-8);
    for (const auto& f : fx.factors) CHECK(f.vectors.colwise().sum().cwiseAbs().maxCoeff() < 1e-8);
    CHECK_THROWS_AS(fx.vector("A", "zz"), InputError);
    CHECK_THROWS_AS(fx.factor("C"), InputError);
}

TEST_CASE("two balanced levels give half the mean difference") {
    std::mt19937 gen(10);
    const auto x = random_matrix(6, 3, gen);
    FactorDesign d;
    d.add("f", {"a", "b", "a", "b", "a", "b"});
    const auto fx = effect_vectors(x, d);
    Eigen::RowVectorXd ma = Eigen::RowVectorXd::Zero(3), mb = Eigen::RowVectorXd::Zero(3);
    for (int i = 0; i < 6; ++i) (i % 2 ? mb : ma) += x.row(i) / 3.0;
    CHECK((fx.vector("f", "a").transpose() - (ma - mb) / 2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((fx.vector("f", "b").transpose() + (ma - mb) / 2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("effect recovery error shrinks like sigma / sqrt(n / L)") {
    std::mt19937 gen(11);
    const int d_dim = 50;
    auto recovery_rms = [&](int reps) {
        const auto d = balanced_design(reps);
        Eigen::MatrixXd beta = random_matrix(2, d_dim, gen);
        beta.rowwise() -= beta.colwise().mean();
        const int n = 6 * reps;
        Eigen::MatrixXd x = 0.5 * random_matrix(n, d_dim, gen);
        for (int i = 0; i < n; ++i) x.row(i) += beta.row(d[0].labels[i] == "p" ? 0 : 1);
        const auto fx = effect_vectors(x, d);
        return std::sqrt((fx.factor("A").vectors - beta).squaredNorm() / (2.0 * d_dim));
    };
    // Per-level mean of n/2 samples has sd sigma / sqrt(n/2); the centered
    // effect halves the difference of two such means.
    for (int reps : {4, 16}) {
        const double n = 6.0 * reps;
        const double expected = 0.5 / std::sqrt(n);
        const double got = recovery_rms(reps);
        CHECK(got < 2.0 * expected);
        CHECK(got > 0.5 * expected);
    }
}

TEST_CASE("pca projection") {
    std::mt19937 gen(12);
    const auto u = random_matrix(10, 1, gen), v = random_matrix(1, 4, gen);
    const Eigen::MatrixXd rank1 = u * v;
    const auto p1 = pca_project(rank1, 1);
    CHECK(p1.explained_ratio(0) == doctest::Approx(1.0).epsilon(1e-12));

    const auto x = random_matrix(12, 5, gen);
    const auto p = pca_project(x, 3);
    CHECK(p.scores.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(p.explained_ratio(0) >= p.explained_ratio(1));
    CHECK(p.explained_ratio(1) >= p.explained_ratio(2));
    for (int c = 0; c < 3; ++c) {
        Eigen::Index idx;
        p.components.col(c).cwiseAbs().maxCoeff(&idx);
        CHECK(p.components(idx, c) > 0);
        CHECK(p.components.col(c).norm() == doctest::Approx(1.0));
    }

    const Eigen::MatrixXd low = random_matrix(12, 2, gen) * random_matrix(2, 5, gen);
    const auto full = pca_project(low, 2);
    const Eigen::MatrixXd recon = (full.scores * full.components.transpose()).rowwise() + full.mean.transpose();
    CHECK((recon - low).cwiseAbs().maxCoeff() < 1e-8);
    CHECK_THROWS_AS(pca_project(x, 6), InputError);
    CHECK_THROWS_AS(pca_project(x, 0), InputError);
}

TEST_CASE("composite factors join labels") {
    FactorDesign d;
    d.add("color2", {"blue", "none", "blue"});
    d.add("shape2", {"square", "circle", "circle"});
    d.add_composite("color2shape2", {"color2", "shape2"});
    CHECK(d.factor("color2shape2").labels == std::vector<std::string>{"blue_square", "none_circle", "blue_circle"});
    CHECK_THROWS_AS(d.factor("nope"), InputError);
    CHECK_THROWS_AS(d.add("short", {"a"}), InputError);
}

TEST_CASE("report table layout") {
    CHECK(report_csv_header() == "Feature,Levels,df_eff,df_res,SS_tot,SSR_marg,R²_marg,SSR_part,R²_part,η²_p,p_perm");
    FactorRow row;
    row.feature = "shape2";
    row.levels = 3;
    row.df_eff = 2;
    row.df_res = 249;
    row.ss_tot = 100;
    row.ssr_marg = 40.5;
    row.r2_marg = 0.405;
    row.ssr_part = 37.5;
    row.r2_part = 0.375;
    row.eta2_p = 0.6;
    CHECK(report_csv_row(row) == "shape2,3,2,249,100.0000,40.5000,0.4050,37.5000,0.3750,0.6000,");
    row.p_perm = 1.0 / 101;
    CHECK(report_csv_row(row) == "shape2,3,2,249,100.0000,40.5000,0.4050,37.5000,0.3750,0.6000,0.0099");
}

TEST_CASE("labels CSV and effect files round-trip") {
    oracle::TempDir dir("varpart");
    const auto labels = dir.file("labels.csv");
    {
        std::ofstream out(labels);
        out << "relation,shape2\nabove,circle\nbelow,square\nabove,square\nbelow,circle\n";
    }
    const auto d = read_labels_csv(labels);
    CHECK(d.size() == 2);
    CHECK(d.n() == 4);
    CHECK(d.factor("shape2").labels[1] == "square");
    CHECK(select_factors(d, {"shape2"}).size() == 1);
    {
        std::ofstream out(dir.file("bad.csv"));
        out << "a,b\n1\n";
    }
    CHECK_THROWS_AS(read_labels_csv(dir.file("bad.csv")), InputError);

    std::mt19937 gen(13);
    const auto x = random_matrix(4, 3, gen);
    const auto fx = effect_vectors(x, d);
    const auto path = dir.file("effects.atns");
    write_effects(path, fx);
    const auto back = read_effects(path);
    CHECK((back.mean - fx.mean).cwiseAbs().maxCoeff() < 1e-6);
    for (std::size_t f = 0; f < fx.factors.size(); ++f) {
        CHECK(back.factors[f].name == fx.factors[f].name);
        CHECK(back.factors[f].levels == fx.factors[f].levels);
        CHECK((back.factors[f].vectors - fx.factors[f].vectors).cwiseAbs().maxCoeff() < 1e-6);
    }
}
