#include <cmath>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "njode/errors.hpp"
#include "njode/sde.hpp"
#include "njode/text_table.hpp"

namespace njode {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormatVersion = "njode-dataset-1";
constexpr std::string_view kValuesHeader = "path_id,grid_index,coord,value";
constexpr std::string_view kObservationsHeader = "path_id,grid_index,mask";

json meta_document(const Dataset& ds) {
  json params = json::object();
  for (const auto& [name, v] : ds.model.named_params()) params[name] = v;
  return {
      {"format_version", kFormatVersion},
      {"model", {{"kind", std::string(kind_name(ds.model.kind()))}, {"params", params}}},
      {"T", ds.grid.horizon()},
      {"K", ds.grid.steps()},
      {"N", ds.paths.size()},
      {"obs_prob", ds.obs_prob},
      {"master_seed", ds.master_seed},
      {"d_X", ds.model.dim()},
      {"mask_mode", ds.mask_mode.to_string()},
  };
}

template <typename T>
T meta_field(const json& meta, const char* key) {
  if (!meta.contains(key)) throw DataError(std::string("meta.json: missing field '") + key + "'");
  try {
    return meta.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("meta.json: field '") + key + "' has the wrong type");
  }
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());

  text::write_file((fs::path(dir) / "meta.json").string(), meta_document(ds).dump(2) + "\n");

  const int points = ds.grid.points();
  const int d = ds.model.dim();
  std::string values;
  values.reserve(ds.paths.size() * static_cast<std::size_t>(points * d) * 32 + 64);
  values.append(kValuesHeader).push_back('\n');
  std::string obs;
  obs.append(kObservationsHeader).push_back('\n');
  for (const auto& p : ds.paths) {
    const auto id = std::to_string(p.path_id);
    for (int i = 0; i < points; ++i) {
      for (int c = 0; c < d; ++c) {
        values.append(id).push_back(',');
        values.append(std::to_string(i)).push_back(',');
        values.append(std::to_string(c)).push_back(',');
        values.append(text::format_double(p.value(c, i))).push_back('\n');
      }
    }
    for (int o = 0; o < p.schedule.count(); ++o) {
      obs.append(id).push_back(',');
      obs.append(std::to_string(p.schedule.indices[o])).push_back(',');
      for (auto b : p.schedule.mask(o)) obs.push_back(b ? '1' : '0');
      obs.push_back('\n');
    }
  }
  text::write_file((fs::path(dir) / "values.csv").string(), values);
  text::write_file((fs::path(dir) / "observations.csv").string(), obs);
}

Dataset read_dataset(const std::string& dir) {
  const auto meta_path = fs::path(dir) / "meta.json";
  if (!fs::exists(meta_path)) throw DataError("dataset directory " + dir + " has no meta.json");
  json meta;
  try {
    meta = json::parse(text::read_file(meta_path.string()));
  } catch (const json::parse_error& e) {
    throw DataError("meta.json is not valid JSON: " + std::string(e.what()));
  }
  if (meta_field<std::string>(meta, "format_version") != kFormatVersion)
    throw DataError("meta.json: unsupported format_version");

  Dataset ds;
  const int d = meta_field<int>(meta, "d_X");
  if (!meta.contains("model")) throw DataError("meta.json: missing field 'model'");
  const auto& model_doc = meta.at("model");
  try {
    const auto kind = kind_from_name(meta_field<std::string>(model_doc, "kind"));
    SdeModel model = SdeModel::make_default(kind, d);
    if (model_doc.contains("params"))
      for (const auto& [name, v] : model_doc.at("params").items()) model.set_param(name, v.get<double>());
    model.validate();
    ds.model = model;
    ds.grid = TimeGrid(meta_field<double>(meta, "T"), meta_field<int>(meta, "K"));
    ds.obs_prob = meta_field<double>(meta, "obs_prob");
    if (meta.contains("mask_mode")) ds.mask_mode = MaskMode::parse(meta_field<std::string>(meta, "mask_mode"));
  } catch (const PreconditionError& e) {
    throw DataError(std::string("meta.json: ") + e.what());
  } catch (const json::exception& e) {
    throw DataError(std::string("meta.json: malformed model block: ") + e.what());
  }
  ds.master_seed = meta_field<std::uint64_t>(meta, "master_seed");
  const auto n_paths = meta_field<std::int64_t>(meta, "N");
  if (n_paths < 0) throw DataError("meta.json: negative N");

  const int points = ds.grid.points();
  ds.paths.reserve(static_cast<std::size_t>(n_paths));

  // values.csv: every path has exactly points * d rows in (grid_index, coord) order.
  {
    const auto buffer = text::read_file((fs::path(dir) / "values.csv").string());
    text::LineReader reader(buffer);
    std::string_view line;
    if (!reader.next(line) || line != kValuesHeader) throw DataError("values.csv: bad header");
    std::int64_t row = 0;
    const std::int64_t rows_per_path = static_cast<std::int64_t>(points) * d;
    while (reader.next(line)) {
      if (line.empty()) continue;
      const auto f = text::split_fields(line);
      std::int64_t id = 0, gi = 0, c = 0;
      double v = 0.0;
      if (f.size() != 4 || !text::parse_int(f[0], id) || !text::parse_int(f[1], gi) || !text::parse_int(f[2], c) ||
          !text::parse_double(f[3], v))
        throw DataError("values.csv: malformed row at line " + std::to_string(reader.line_number()));
      const std::int64_t within = row % rows_per_path;
      if (within == 0) {
        if (!ds.paths.empty() && id <= ds.paths.back().path_id)
          throw DataError("values.csv: path_id " + std::to_string(id) + " out of order");
        Path p;
        p.path_id = id;
        p.dim = d;
        p.values.assign(static_cast<std::size_t>(rows_per_path), 0.0);
        ds.paths.push_back(std::move(p));
      }
      Path& p = ds.paths.back();
      if (id != p.path_id || gi != within / d || c != within % d)
        throw DataError("values.csv: unexpected row for path_id " + std::to_string(id) + " at line " +
                        std::to_string(reader.line_number()) + " (rows must be ordered by grid_index, coord)");
      if (!std::isfinite(v)) throw DataError("values.csv: non-finite value for path_id " + std::to_string(id));
      p.values[static_cast<std::size_t>(c) * points + static_cast<std::size_t>(gi)] = v;
      ++row;
    }
    if (row % rows_per_path != 0) throw DataError("values.csv: last path is truncated");
    if (static_cast<std::int64_t>(ds.paths.size()) != n_paths)
      throw DataError("values.csv: holds " + std::to_string(ds.paths.size()) + " paths, meta.json says " +
                      std::to_string(n_paths));
  }

  // observations.csv
  {
    const auto buffer = text::read_file((fs::path(dir) / "observations.csv").string());
    text::LineReader reader(buffer);
    std::string_view line;
    if (!reader.next(line) || line != kObservationsHeader) throw DataError("observations.csv: bad header");
    std::size_t cursor = 0;
    while (reader.next(line)) {
      if (line.empty()) continue;
      const auto f = text::split_fields(line);
      std::int64_t id = 0, gi = 0;
      if (f.size() != 3 || !text::parse_int(f[0], id) || !text::parse_int(f[1], gi) ||
          f[2].size() != static_cast<std::size_t>(d))
        throw DataError("observations.csv: malformed row at line " + std::to_string(reader.line_number()));
      while (cursor < ds.paths.size() && ds.paths[cursor].path_id < id) ++cursor;
      if (cursor == ds.paths.size() || ds.paths[cursor].path_id != id)
        throw DataError("observations.csv: path_id " + std::to_string(id) + " unknown or out of order");
      auto& s = ds.paths[cursor].schedule;
      s.dim = d;
      if (gi < 0 || gi >= points)
        throw DataError("observations.csv: grid index out of range for path_id " + std::to_string(id));
      if (!s.indices.empty() && gi <= s.indices.back())
        throw DataError("observations.csv: observation indices not increasing for path_id " + std::to_string(id));
      s.indices.push_back(static_cast<int>(gi));
      for (char ch : f[2]) {
        if (ch != '0' && ch != '1')
          throw DataError("observations.csv: bad mask for path_id " + std::to_string(id));
        s.masks.push_back(ch == '1' ? 1 : 0);
      }
    }
    for (const auto& p : ds.paths) {
      try {
        p.schedule.validate(ds.grid);
      } catch (const PreconditionError& e) {
        throw DataError("observations.csv: path_id " + std::to_string(p.path_id) + ": " + e.what());
      }
    }
  }
  return ds;
}

}  // namespace njode
