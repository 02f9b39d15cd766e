#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/tiling.hpp"

namespace histcode {

struct LabelRow {
  std::string slide_id;
  std::string patient_id;
  int label = SlideLabel::kUnknown;
};

inline std::vector<LabelRow> load_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labels file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty labels file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "slide_id,patient_id,label")
    throw SchemaMismatch("unexpected labels header: " + line);
  std::vector<LabelRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    LabelRow r;
    std::string label;
    if (!std::getline(ss, r.slide_id, ',') ||
        !std::getline(ss, r.patient_id, ',') || !std::getline(ss, label))
      throw SchemaMismatch("malformed labels row at line " +
                           std::to_string(lineno));
    r.label = SlideLabel::parse(label);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_labels_csv(const std::string& path,
                             const std::vector<LabelRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write labels file: " + path);
  out << "slide_id,patient_id,label\n";
  for (const auto& r : rows)
    out << r.slide_id << ',' << r.patient_id << ','
        << SlideLabel::name(r.label) << '\n';
  if (!out) throw IoError("failed writing labels file: " + path);
}

}  // namespace histcode
