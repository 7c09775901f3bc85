#include "relcirc/varpart_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relcirc/tensor_io.hpp"

namespace relcirc::varpart {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string fixed4(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

FactorDesign read_labels_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(kModule, "cannot open labels file " + path);
    std::string line;
    if (!std::getline(in, line)) throw InputError(kModule, path + " is empty");
    const auto names = split_csv_line(line);
    std::vector<std::vector<std::string>> columns(names.size());
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != names.size()) {
            throw InputError(kModule, path + ":" + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                          " cells, header has " + std::to_string(names.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) columns[c].push_back(cells[c]);
    }
    FactorDesign design;
    for (std::size_t c = 0; c < names.size(); ++c) design.add(names[c], std::move(columns[c]));
    return design;
}

FactorDesign select_factors(const FactorDesign& design, const std::vector<std::string>& names) {
    if (names.empty()) return design;
    FactorDesign out;
    for (const auto& n : names) out.add(n, design.factor(n).labels);
    return out;
}

std::string report_csv_header() {
    return "Feature,Levels,df_eff,df_res,SS_tot,SSR_marg,R²_marg,SSR_part,R²_part,η²_p,p_perm";
}

std::string report_csv_row(const FactorRow& r) {
    std::string row = r.feature + ',' + std::to_string(r.levels) + ',' + std::to_string(r.df_eff) + ',' +
                      std::to_string(r.df_res) + ',' + fixed4(r.ss_tot) + ',' + fixed4(r.ssr_marg) + ',' +
                      fixed4(r.r2_marg) + ',' + fixed4(r.ssr_part) + ',' + fixed4(r.r2_part) + ',' +
                      fixed4(r.eta2_p) + ',';
    if (!std::isnan(r.p_perm)) row += fixed4(r.p_perm);
    return row;
}

std::string report_csv(const VarPartReport& report) {
    std::string out = report_csv_header() + "\n";
    for (const auto& r : report.rows) out += report_csv_row(r) + "\n";
    return out;
}

nlohmann::json to_json(const VarPartReport& report) {
    nlohmann::json j;
    j["n"] = report.n;
    j["rank"] = report.rank;
    j["ss_total"] = report.ss_total;
    j["ss_model"] = report.ss_model;
    j["ss_resid"] = report.ss_resid;
    j["r2_total"] = report.r2_total;
    j["factors"] = nlohmann::json::array();
    for (const auto& r : report.rows) {
        nlohmann::json f{{"feature", r.feature}, {"levels", r.levels},     {"df_eff", r.df_eff},
                         {"df_res", r.df_res},   {"ss_tot", r.ss_tot},     {"ssr_marg", r.ssr_marg},
                         {"r2_marg", r.r2_marg}, {"ssr_part", r.ssr_part}, {"r2_part", r.r2_part},
                         {"eta2_p", r.eta2_p}};
        f["p_perm"] = std::isnan(r.p_perm) ? nlohmann::json(nullptr) : nlohmann::json(r.p_perm);
        j["factors"].push_back(std::move(f));
    }
    return j;
}

std::string effects_index_path(const std::string& atns_path) {
    return std::filesystem::path(atns_path).replace_extension(".index.json").string();
}

void write_effects(const std::string& atns_path, const EffectVectors<double>& effects) {
    const auto d = effects.mean.size();
    Eigen::Index rows = 1;
    for (const auto& f : effects.factors) rows += f.vectors.rows();
    std::vector<float> values;
    values.reserve(static_cast<std::size_t>(rows * d));
    auto push_row = [&](const auto& v) {
        for (Eigen::Index c = 0; c < d; ++c) values.push_back(static_cast<float>(v(c)));
    };
    push_row(effects.mean);
    nlohmann::json index;
    index["dim"] = d;
    index["mean_row"] = 0;
    index["factors"] = nlohmann::json::array();
    Eigen::Index row = 1;
    for (const auto& f : effects.factors) {
        index["factors"].push_back({{"name", f.name}, {"levels", f.levels}, {"first_row", row}});
        for (Eigen::Index r = 0; r < f.vectors.rows(); ++r) push_row(f.vectors.row(r));
        row += f.vectors.rows();
    }
    const std::vector<std::uint64_t> dims{static_cast<std::uint64_t>(rows), static_cast<std::uint64_t>(d)};
    tensor_io::write_tensor(atns_path, dims, tensor_io::DType::f32, values);
    std::ofstream out(effects_index_path(atns_path));
    if (!out) throw IoError(kModule, "cannot write " + effects_index_path(atns_path));
    out << index.dump(2) << '\n';
}

EffectVectors<double> read_effects(const std::string& atns_path) {
    const auto tensor = tensor_io::read_tensor(atns_path);
    if (tensor.dims().size() != 2) throw InputError(kModule, "effect tensor must be 2-D");
    const auto rows = static_cast<Eigen::Index>(tensor.dims()[0]);
    const auto d = static_cast<Eigen::Index>(tensor.dims()[1]);
    const Eigen::MatrixXd m =
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(tensor.values.data(), rows, d)
            .cast<double>();
    std::ifstream in(effects_index_path(atns_path));
    if (!in) throw IoError(kModule, "missing effect index " + effects_index_path(atns_path));
    EffectVectors<double> out;
    try {
        nlohmann::json index;
        in >> index;
        out.mean = m.row(index.at("mean_row").get<Eigen::Index>()).transpose();
        for (const auto& f : index.at("factors")) {
            FactorEffects<double> fx;
            fx.name = f.at("name").get<std::string>();
            fx.levels = f.at("levels").get<std::vector<std::string>>();
            const auto first = f.at("first_row").get<Eigen::Index>();
            const auto count = static_cast<Eigen::Index>(fx.levels.size());
            if (first < 0 || first + count > rows) throw InputError(kModule, "effect index rows out of range");
            fx.vectors = m.middleRows(first, count);
            out.factors.push_back(std::move(fx));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(kModule, std::string("malformed effect index: ") + e.what());
    }
    return out;
}

}  // namespace relcirc::varpart
