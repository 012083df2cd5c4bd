#pragma once

// JSONL dataset files: one record per line, fixed field order, unknown
// fields carried through.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "distill/error.hpp"
#include "distill/quantize.hpp"
#include "json.hpp"

namespace distill {

using ojson = nlohmann::ordered_json;

inline constexpr std::array<std::string_view, 10> kRecordFields = {"pair_id", "context", "x",     "y",     "group",
                                                                   "comp",    "sim",     "scores", "stage", "domain"};

inline ojson record_to_json(const DatasetRecord& r) {
  ojson j;
  j["pair_id"] = r.pair_id;
  j["context"] = r.context;
  j["x"] = r.x;
  j["y"] = r.y;
  j["group"] = r.group ? ojson(to_string(*r.group)) : ojson(nullptr);
  j["comp"] = r.comp;
  j["sim"] = r.sim;
  ojson s = ojson::object();
  if (r.scores.entail_xy) s["entail_xy"] = *r.scores.entail_xy;
  if (r.scores.entail_yx) s["entail_yx"] = *r.scores.entail_yx;
  s["rouge_l"] = r.scores.rouge_l;
  s["density"] = r.scores.density;
  s["density_norm"] = r.scores.density_norm;
  j["scores"] = std::move(s);
  j["stage"] = to_string(r.stage);
  j["domain"] = r.domain;
  if (!r.provenance.empty()) j["provenance"] = r.provenance;
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  return j;
}

inline std::string record_to_line(const DatasetRecord& r) { return record_to_json(r).dump() + "\n"; }

namespace detail {

template <typename T>
T field(const ojson& j, std::string_view key) {
  auto it = j.find(key);
  if (it == j.end()) throw InputError("missing field '" + std::string(key) + "'");
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError("field '" + std::string(key) + "' has the wrong type");
  }
}

inline std::optional<double> optional_number(const ojson& j, std::string_view key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw InputError("field '" + std::string(key) + "' is not a number");
  return it->get<double>();
}

}  // namespace detail

inline DatasetRecord record_from_json(const ojson& j) {
  if (!j.is_object()) throw InputError("record is not a JSON object");
  DatasetRecord r;
  r.pair_id = detail::field<std::string>(j, "pair_id");
  r.context = detail::field<std::string>(j, "context");
  r.x = detail::field<std::string>(j, "x");
  r.y = detail::field<std::string>(j, "y");
  if (auto it = j.find("group"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw InputError("field 'group' has the wrong type");
    r.group = parse_group_kind(it->get<std::string>());
  }
  r.comp = detail::field<double>(j, "comp");
  r.sim = detail::field<double>(j, "sim");
  const auto s = j.find("scores");
  if (s == j.end() || !s->is_object()) throw InputError("missing field 'scores'");
  r.scores.entail_xy = detail::optional_number(*s, "entail_xy");
  r.scores.entail_yx = detail::optional_number(*s, "entail_yx");
  r.scores.rouge_l = detail::optional_number(*s, "rouge_l").value_or(0.0);
  r.scores.density = detail::optional_number(*s, "density").value_or(0.0);
  r.scores.density_norm = detail::optional_number(*s, "density_norm").value_or(0.0);
  r.stage = parse_stage(detail::field<std::string>(j, "stage"));
  r.domain = detail::field<std::string>(j, "domain");
  if (auto it = j.find("provenance"); it != j.end()) r.provenance = detail::field<std::string>(j, "provenance");
  for (const auto& [k, v] : j.items()) {
    if (k == "provenance" || std::find(kRecordFields.begin(), kRecordFields.end(), k) != kRecordFields.end()) continue;
    r.extra[k] = v;
  }
  return r;
}

/// Streams records from a JSONL stream. Errors carry the 1-based line.
/// A final line without '\n' is rejected as a truncated write.
inline void read_dataset(std::istream& in, const std::function<void(DatasetRecord&&)>& sink) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (in.eof()) throw InputError("line " + std::to_string(line_no) + ": partial trailing line (no newline)");
    if (line.empty()) throw InputError("line " + std::to_string(line_no) + ": empty line");
    try {
      sink(record_from_json(ojson::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::vector<DatasetRecord> read_dataset(std::istream& in) {
  std::vector<DatasetRecord> out;
  read_dataset(in, [&](DatasetRecord&& r) { out.push_back(std::move(r)); });
  return out;
}

inline std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return read_dataset(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline void write_dataset(std::ostream& out, std::span<const DatasetRecord> records) {
  for (const auto& r : records) out << record_to_line(r);
}

inline void write_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  write_dataset(out, records);
  if (!out) throw InputError("write failed: " + path.string());
}

inline void write_training_file(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& r : records) out << training_json(r).dump() << '\n';
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw InputError("write failed: " + path.string());
}

}  // namespace distill
