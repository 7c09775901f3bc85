#pragma once

// File formats around varpart: factor-label CSV, the report table and
// effect vectors as ATNS + index JSON.

#include <string>
#include <vector>

#include <json.hpp>

#include "relcirc/varpart.hpp"

namespace relcirc::varpart {

// Header row names the factors; each following row holds one sample's labels.
FactorDesign read_labels_csv(const std::string& path);

// `names` selects and orders factors; empty keeps every column.
FactorDesign select_factors(const FactorDesign& design, const std::vector<std::string>& names);

std::string report_csv_header();
std::string report_csv_row(const FactorRow& row);
std::string report_csv(const VarPartReport& report);
nlohmann::json to_json(const VarPartReport& report);

// Rows: mean, then every factor's levels in order. The index JSON records
// the row ranges.
void write_effects(const std::string& atns_path, const EffectVectors<double>& effects);
EffectVectors<double> read_effects(const std::string& atns_path);
std::string effects_index_path(const std::string& atns_path);

}  // namespace relcirc::varpart
