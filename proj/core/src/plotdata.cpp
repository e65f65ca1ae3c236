#include "hl/plotdata.hpp"

#include <fstream>
#include <regex>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace hl::plotdata {

namespace {

[[noreturn]] void fail_line(const std::string& path, std::size_t line, const std::string& why) {
  throw std::runtime_error("plot-data: " + path + ":" + std::to_string(line) + ": " + why);
}

double require_number(const nlohmann::json& row, const char* key, const std::string& path,
                      std::size_t line) {
  if (!row.contains(key) || !row.at(key).is_number())
    fail_line(path, line, std::string("missing numeric field \"") + key + "\"");
  return row.at(key).get<double>();
}

}  // namespace

std::uint64_t seed_from_path(const std::string& path) {
  static const std::regex pattern("seed(\\d+)");
  std::uint64_t seed = 0;
  for (auto it = std::sregex_iterator(path.begin(), path.end(), pattern);
       it != std::sregex_iterator(); ++it) {
    try {
      seed = std::stoull((*it)[1].str());
    } catch (const std::exception&) {
      // digits too long for 64 bits: keep the previous match
    }
  }
  return seed;
}

std::vector<PlotRow> tidy_metrics(std::span<const std::string> paths) {
  static const char* kMetrics[] = {"loss", "mean_reward", "grad_norm", "kl"};
  std::vector<PlotRow> rows;

  for (const std::string& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("plot-data: cannot open " + path);
    const std::uint64_t seed = seed_from_path(path);

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail_line(path, line_no, e.what());
      }
      if (!row.is_object()) fail_line(path, line_no, "expected a JSON object");
      if (!row.contains("step") || !row.at("step").is_number_integer())
        fail_line(path, line_no, "missing integer field \"step\"");
      if (!row.contains("variant") || !row.at("variant").is_string())
        fail_line(path, line_no, "missing string field \"variant\"");

      const long long step = row.at("step").get<long long>();
      const std::string variant = row.at("variant").get<std::string>();
      for (const char* metric : kMetrics) {
        rows.push_back(
            {variant, seed, step, metric, require_number(row, metric, path, line_no)});
      }
    }
  }
  return rows;
}

void write_csv(std::span<const PlotRow> rows, std::ostream& out) {
  out << "variant,seed,step,metric,value\n";
  for (const PlotRow& r : rows) {
    out << r.variant << ',' << r.seed << ',' << r.step << ',' << r.metric << ','
        << nlohmann::json(r.value).dump() << '\n';
  }
}

}  // namespace hl::plotdata
