#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "oracles.hpp"
#include "relcirc/tensor_io.hpp"

using namespace relcirc;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

// Runs the driver with stderr merged into the captured text.
Run run(const std::string& args) {
    const std::string cmd = std::string(RELCIRC_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t got = 0;
    while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

}  // namespace

TEST_CASE("usage errors exit with 2 and help exits with 0") {
    CHECK(run("").code == 2);
    CHECK(run("gen-dataset --n 3").code == 2);
    CHECK(run("no-such-command").code == 2);
    CHECK(run("gen-dataset --n 3 --out x --occlusion sometimes").code == 2);
    const auto help = run("gen-dataset --help");
    CHECK(help.code == 0);
    CHECK(help.out.find("--color-drop") != std::string::npos);
}

TEST_CASE("data errors exit with 1 and name the module") {
    oracle::TempDir dir("cli");
    spit(dir.file("bad.atns"), "ATNX0000000000000000");
    const auto r = run("--quiet synopsis --attn " + dir.file("bad.atns") + " --masks " + dir.file("m.json") + " --out " +
                       dir.file("s.json"));
    CHECK(r.code == 1);
    CHECK(r.out.find("error [") != std::string::npos);
}

TEST_CASE("gen-dataset then evaluate scores its own renders as correct") {
    oracle::TempDir dir("cli");
    const auto data = dir.file("data");
    REQUIRE(run("--quiet gen-dataset --n 12 --seed 5 --out " + data).code == 0);
    const auto labels = slurp(data + "/labels.jsonl");
    CHECK(count_lines(labels) == 12);

    const auto r = run("gen-dataset --n 12 --seed 5 --out " + dir.file("again"));
    CHECK(r.code == 0);
    CHECK(r.out.find("\"event\":\"gen-dataset.done\"") != std::string::npos);
    CHECK(slurp(dir.file("again") + "/labels.jsonl") == labels);

    REQUIRE(run("--quiet evaluate --labels " + data + "/labels.jsonl --out " + dir.file("eval.jsonl") + " --summary " +
                dir.file("summary.csv"))
                .code == 0);
    std::istringstream lines(slurp(dir.file("eval.jsonl")));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j["overall"] == true);
        ++n;
    }
    CHECK(n == 12);
    const auto summary = slurp(dir.file("summary.csv"));
    CHECK(summary.rfind("shape,color,bind,sp rel,sp rel+,Dx,Dy\n1.0000,1.0000,1.0000,1.0000,1.0000,", 0) == 0);
}

TEST_CASE("encode writes [n, L, D] and group masks") {
    oracle::TempDir dir("cli");
    spit(dir.file("groups.json"), R"({"obj": {"words": ["circle", "square"]}})");
    const auto r = run("--quiet encode --caption \"red circle is above blue square\" --caption \"square is left of circle\" "
                       "--dim 16 --out " + dir.file("e.atns") + " --tokens-out " + dir.file("t.json") + " --groups " +
                       dir.file("groups.json"));
    REQUIRE(r.code == 0);
    const auto t = tensor_io::read_tensor(dir.file("e.atns"));
    CHECK(t.dims() == std::vector<std::uint64_t>{2, 20, 16});
    const auto tokens = nlohmann::json::parse(slurp(dir.file("t.json")));
    CHECK(tokens["eos_positions"] == nlohmann::json::array({6, 5}));
    const auto masks = nlohmann::json::parse(slurp(dir.file("e.masks.json")));
    REQUIRE(masks.size() == 2);
    double sum = 0;
    for (const auto& v : masks[0]["obj"]) sum += v.get<double>();
    CHECK(sum == 2.0);
    CHECK(run("--quiet encode --caption \"red dog\" --out " + dir.file("x.atns")).code == 1);
}

TEST_CASE("varpart, effects and edit-embedding chain") {
    oracle::TempDir dir("cli");
    const int n = 24, d = 6;
    std::mt19937 gen(8);
    std::normal_distribution<float> nd(0.0f, 0.05f);
    std::vector<float> x(static_cast<std::size_t>(n * d));
    std::string csv = "relation,shape\n";
    for (int i = 0; i < n; ++i) {
        const bool above = i % 2 == 0;
        const bool circle = (i / 2) % 2 == 0;
        csv += std::string(above ? "above" : "below") + "," + (circle ? "circle" : "square") + "\n";
        for (int k = 0; k < d; ++k) x[static_cast<std::size_t>(i * d + k)] = nd(gen);
        x[static_cast<std::size_t>(i * d)] += above ? 1.0f : -1.0f;
        x[static_cast<std::size_t>(i * d + 1)] += circle ? 0.5f : -0.5f;
    }
    spit(dir.file("labels.csv"), csv);
    tensor_io::write_tensor(dir.file("x.atns"), std::vector<std::uint64_t>{n, d}, tensor_io::DType::f32, x);

    REQUIRE(run("--quiet varpart --emb " + dir.file("x.atns") + " --labels " + dir.file("labels.csv") +
                " --perm 20 --out " + dir.file("vp.csv") + " --json " + dir.file("vp.json"))
                .code == 0);
    const auto report = slurp(dir.file("vp.csv"));
    CHECK(report.rfind("Feature,", 0) == 0);
    CHECK(report.find("relation,") != std::string::npos);
    const auto j = nlohmann::json::parse(slurp(dir.file("vp.json")));
    CHECK(j["r2_total"].get<double>() > 0.9);

    REQUIRE(run("--quiet effects --emb " + dir.file("x.atns") + " --labels " + dir.file("labels.csv") + " --out " +
                dir.file("fx.atns") + " --pca 2")
                .code == 0);
    CHECK(count_lines(slurp(dir.file("fx.pca.csv"))) == n + 1);

    std::vector<float> prompt(static_cast<std::size_t>(3 * d), 0.0f);
    tensor_io::write_tensor(dir.file("p.atns"), std::vector<std::uint64_t>{3, d}, tensor_io::DType::f32, prompt);
    REQUIRE(run("--quiet edit-embedding --emb " + dir.file("p.atns") + " --effects " + dir.file("fx.atns") +
                " --token 1 --remove relation=above --add relation=below --alpha 1 --out " + dir.file("q.atns"))
                .code == 0);
    const auto edited = tensor_io::read_tensor(dir.file("q.atns"));
    CHECK(edited.values[static_cast<std::size_t>(d)] < -1.5f);
    for (int k = 0; k < d; ++k) CHECK(edited.values[static_cast<std::size_t>(k)] == 0.0f);
    CHECK(run("--quiet edit-embedding --emb " + dir.file("p.atns") + " --effects " + dir.file("fx.atns") +
              " --token 1 --remove relation=behind --add relation=below --out " + dir.file("r.atns"))
              .code == 1);
}

TEST_CASE("plan emit and validate") {
    oracle::TempDir dir("cli");
    const std::string geom = "--layers 12 --heads 16 --text-tokens 20 --image-tokens 64";
    REQUIRE(run("--quiet plan " + geom + " --mask 2:8:3,4 --inject 2:8:4:3 --out " + dir.file("plan.json")).code == 0);
    const auto stdout_plan = run("--quiet plan " + geom + " --mask 2:8:3,4 --inject 2:8:4:3");
    CHECK(stdout_plan.code == 0);
    CHECK(stdout_plan.out == slurp(dir.file("plan.json")));
    CHECK(run("--quiet plan --validate " + dir.file("plan.json")).code == 0);
    CHECK(run("--quiet plan " + geom + " --inject 4:3:2:8").code == 1);
    spit(dir.file("broken.json"), "{\"geometry\": 3}");
    CHECK(run("--quiet plan --validate " + dir.file("broken.json")).code == 1);
}

TEST_CASE("sweep --list prints every prompt") {
    const auto r = run("--quiet sweep --list");
    CHECK(r.code == 0);
    CHECK(r.out.rfind("prompt_id,caption\n", 0) == 0);
    CHECK(count_lines(r.out) == 169);
}
