#include "psdn/manifest.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "psdn/digest.hpp"
#include "psdn/errors.hpp"

namespace psdn {
namespace {

using nlohmann::ordered_json;

const std::set<std::string> kEntryFields = {"id",       "speaker_id",
                                            "accent_label", "mel_path",
                                            "bnf_path", "split"};

ManifestEntry parse_entry(const std::string& line, int lineno) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw DataError("manifest line " + std::to_string(lineno) +
                    ": invalid JSON: " + e.what());
  }
  if (!j.is_object())
    throw DataError("manifest line " + std::to_string(lineno) +
                    ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (kEntryFields.count(it.key()) == 0)
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": unknown field '" + it.key() + "'");
  }
  for (const auto& f : kEntryFields) {
    if (!j.contains(f))
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": missing field '" + f + "'");
  }
  ManifestEntry e;
  try {
    e.id = j.at("id").get<std::string>();
    e.speaker_id = j.at("speaker_id").get<std::string>();
    e.accent_label = j.at("accent_label").get<int>();
    e.mel_path = j.at("mel_path").get<std::string>();
    e.bnf_path = j.at("bnf_path").get<std::string>();
    e.split = split_from_name(j.at("split").get<std::string>());
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e2) {
    throw DataError("manifest line " + std::to_string(lineno) + ": " +
                    e2.what());
  }
  return e;
}

// Returns (digest, K) from a sibling gen_config.json, if any.
std::pair<std::string, int> sibling_config(const std::filesystem::path& dir) {
  const auto cfg_path = dir / "gen_config.json";
  if (!std::filesystem::exists(cfg_path)) return {"", -1};
  std::ifstream in(cfg_path);
  if (!in) throw IoError("cannot open: " + cfg_path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw DataError("gen_config.json: invalid JSON: " + std::string(e.what()));
  }
  if (!j.contains("generator") || !j.contains("digest"))
    throw DataError("gen_config.json: missing 'generator' or 'digest'");
  ordered_json body;
  body["generator"] = j["generator"];
  if (j.contains("counts")) body["counts"] = j["counts"];
  const std::string recomputed = digest_hex(body.dump());
  const std::string recorded = j["digest"].get<std::string>();
  if (recomputed != recorded)
    throw DataError("gen_config.json digest mismatch (recorded " + recorded +
                    ", recomputed " + recomputed + ")");
  int k = -1;
  if (j["generator"].contains("num_other_accents"))
    k = j["generator"]["num_other_accents"].get<int>();
  return {recorded, k};
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());

  DatasetManifest m;
  m.root = path.has_parent_path() ? path.parent_path()
                                  : std::filesystem::path(".");

  const auto [digest, num_other] = sibling_config(m.root);
  m.generator_config_digest = digest;

  std::set<std::string> seen_ids;
  bool train_target = false;
  bool train_other = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry e = parse_entry(line, lineno);
    if (e.accent_label < 0)
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": unknown accent label " +
                      std::to_string(e.accent_label));
    if (num_other >= 0 && e.accent_label > num_other)
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": unknown accent label " +
                      std::to_string(e.accent_label) + " (config has K=" +
                      std::to_string(num_other) + ")");
    if (!seen_ids.insert(e.id).second)
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": duplicate id '" + e.id + "'");
    for (const auto& rel : {e.mel_path, e.bnf_path}) {
      if (!std::filesystem::exists(m.resolve(rel)))
        throw DataError("manifest line " + std::to_string(lineno) +
                        ": missing file '" + rel + "'");
    }
    if (e.split == Split::kTrain) {
      train_target |= e.accent_label == 0;
      train_other |= e.accent_label != 0;
    }
    m.entries.push_back(std::move(e));
  }

  if (m.entries.empty()) throw DataError("empty manifest: " + path.string());
  if (!train_target) throw DataError("no target-accent training data");
  if (!train_other) throw DataError("no other-accent training data");
  return m;
}

void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& e : entries) {
    ordered_json j;
    j["id"] = e.id;
    j["speaker_id"] = e.speaker_id;
    j["accent_label"] = e.accent_label;
    j["mel_path"] = e.mel_path;
    j["bnf_path"] = e.bnf_path;
    j["split"] = split_name(e.split);
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace psdn
