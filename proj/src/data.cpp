// SPDX-License-Identifier: Apache-2.0
#include "fedlab/data.hpp"

#include "fedlab/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fedlab {

using nlohmann::json;

void Dataset::validate() const {
  if (num_classes < 1) throw DataError("dataset: num_classes must be >= 1");
  if (vocab_size < 2) throw DataError("dataset: vocab_size must be >= 2");
  if (static_cast<Index>(labels.size()) != tokens.rows())
    throw DataError("dataset: label count does not match sample count");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw DataError("dataset: label out of range at sample " +
                      std::to_string(i));
  for (Index i = 0; i < tokens.rows(); ++i)
    for (Index j = 0; j < tokens.cols(); ++j)
      if (tokens(i, j) < 0 || tokens(i, j) >= vocab_size)
        throw DataError("dataset: token id out of range at sample " +
                        std::to_string(i));
}

void SynthConfig::validate() const {
  if (num_classes < 1 || samples_per_class < 1 || vocab_size < 2 ||
      seq_len < 1 || signal_tokens_per_class < 1)
    throw ConfigError("synth config: counts must be positive");
  if (!(signal_rate >= 0.0 && signal_rate <= 1.0))
    throw ConfigError("synth config: signal_rate must be in [0, 1]");
  // id 0 is the pad, so signal sets are carved out of vocab_size - 1 ids
  if (static_cast<long long>(signal_tokens_per_class) * num_classes >
      vocab_size - 1)
    throw ConfigError("synth config: signal token budget exceeds vocabulary");
}

Dataset synth_generate(const SynthConfig& config) {
  config.validate();
  Rng rng = Rng::derive(config.seed, "synth");

  // Seed-dependent disjoint signal sets: class c owns the c-th slice of a
  // shuffled vocabulary.
  std::vector<int> ids(static_cast<std::size_t>(config.vocab_size - 1));
  std::iota(ids.begin(), ids.end(), 1);
  rng.shuffle(ids.begin(), ids.end());

  const Index n =
      static_cast<Index>(config.num_classes) * config.samples_per_class;
  Dataset ds;
  ds.tokens = IntMatrix(n, config.seq_len);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.num_classes = config.num_classes;
  ds.vocab_size = config.vocab_size;

  const int spc = config.signal_tokens_per_class;
  Index row = 0;
  for (int c = 0; c < config.num_classes; ++c) {
    for (int s = 0; s < config.samples_per_class; ++s, ++row) {
      ds.labels[static_cast<std::size_t>(row)] = c;
      for (Index j = 0; j < config.seq_len; ++j) {
        int tok;
        if (rng.next_double() < config.signal_rate) {
          tok = ids[static_cast<std::size_t>(c) * spc +
                    rng.next_below(static_cast<std::uint64_t>(spc))];
        } else {
          tok = 1 + static_cast<int>(rng.next_below(
                        static_cast<std::uint64_t>(config.vocab_size - 1)));
        }
        ds.tokens(row, j) = tok;
      }
    }
  }
  return ds;
}

std::uint64_t hash_token(std::string_view token) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : token) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

int token_id(std::string_view token, int vocab_size) {
  return 1 + static_cast<int>(hash_token(token) %
                              static_cast<std::uint64_t>(vocab_size - 1));
}

void fill_token_row(IntMatrix& tokens, Index row, const std::string& text,
                    int vocab_size) {
  Index j = 0;
  std::istringstream words(text);
  std::string w;
  while (j < tokens.cols() && words >> w) tokens(row, j++) = token_id(w, vocab_size);
  for (; j < tokens.cols(); ++j) tokens(row, j) = 0;
}

Dataset build_text_dataset(const std::vector<std::string>& texts,
                           const std::vector<int>& labels, int vocab_size,
                           int seq_len, int num_classes,
                           const std::string& path) {
  if (vocab_size < 2 || seq_len < 1)
    throw ConfigError("loader: vocab_size must be >= 2 and seq_len >= 1");
  Dataset ds;
  ds.vocab_size = vocab_size;
  ds.tokens = IntMatrix(static_cast<Index>(texts.size()), seq_len);
  ds.labels = labels;
  int max_label = -1;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    fill_token_row(ds.tokens, static_cast<Index>(i), texts[i], vocab_size);
    max_label = std::max(max_label, labels[i]);
  }
  if (num_classes > 0) {
    if (max_label >= num_classes)
      throw DataError(path + ": label " + std::to_string(max_label) +
                      " >= declared num_classes " + std::to_string(num_classes));
    ds.num_classes = num_classes;
  } else {
    ds.num_classes = max_label + 1;
  }
  return ds;
}

}  // namespace

Dataset load_jsonl(const std::string& path, int vocab_size, int seq_len,
                   int num_classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<std::string> texts;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("text") || !rec.contains("label") ||
        !rec["text"].is_string() || !rec["label"].is_number_integer())
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected {\"text\": string, \"label\": integer}");
    const int label = rec["label"].get<int>();
    if (label < 0)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": negative label");
    texts.push_back(rec["text"].get<std::string>());
    labels.push_back(label);
  }
  return build_text_dataset(texts, labels, vocab_size, seq_len, num_classes,
                            path);
}

namespace {

// Minimal RFC-4180 reader: quoted fields may contain commas, newlines and
// doubled quotes.
std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        any = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        if (any || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        field.clear();
        row.clear();
        any = false;
        break;
      default:
        field += c;
        any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

Dataset load_csv(const std::string& path, int vocab_size, int seq_len,
                 int num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto rows = parse_csv(buf.str());
  if (rows.empty() || rows[0] != std::vector<std::string>{"text", "label"})
    throw DataError(path + ": expected header 'text,label'");
  std::vector<std::string> texts;
  std::vector<int> labels;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 2)
      throw DataError(path + ": row " + std::to_string(i + 1) +
                      " has " + std::to_string(rows[i].size()) + " fields");
    int label = 0;
    try {
      label = std::stoi(rows[i][1]);
    } catch (const std::exception&) {
      throw DataError(path + ": row " + std::to_string(i + 1) +
                      " has non-integer label '" + rows[i][1] + "'");
    }
    if (label < 0)
      throw DataError(path + ": row " + std::to_string(i + 1) +
                      " has negative label");
    texts.push_back(rows[i][0]);
    labels.push_back(label);
  }
  return build_text_dataset(texts, labels, vocab_size, seq_len, num_classes,
                            path);
}

Dataset subset(const Dataset& dataset, const std::vector<Index>& indices) {
  Dataset out;
  out.num_classes = dataset.num_classes;
  out.vocab_size = dataset.vocab_size;
  out.tokens = IntMatrix(static_cast<Index>(indices.size()), dataset.seq_len());
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index src = indices[i];
    if (src < 0 || src >= dataset.size())
      throw DataError("subset: index out of range: " + std::to_string(src));
    out.tokens.row(static_cast<Index>(i)) = dataset.tokens.row(src);
    out.labels[i] = dataset.labels[static_cast<std::size_t>(src)];
  }
  return out;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset,
                                             double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("train_test_split: fraction must be in (0, 1)");
  std::vector<Index> idx(static_cast<std::size_t>(dataset.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(idx.begin(), idx.end());
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(dataset.size())));
  const std::vector<Index> test_idx(idx.begin(), idx.begin() + n_test);
  const std::vector<Index> train_idx(idx.begin() + n_test, idx.end());
  return {subset(dataset, train_idx), subset(dataset, test_idx)};
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  json doc;
  doc["format"] = "fedlab-dataset";
  doc["version"] = 1;
  doc["num_classes"] = dataset.num_classes;
  doc["vocab_size"] = dataset.vocab_size;
  doc["seq_len"] = dataset.seq_len();
  doc["labels"] = dataset.labels;
  json tok = json::array();
  for (Index i = 0; i < dataset.tokens.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < dataset.tokens.cols(); ++j)
      r.push_back(dataset.tokens(i, j));
    tok.push_back(std::move(r));
  }
  doc["tokens"] = std::move(tok);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << doc.dump() << '\n';
  if (!out) throw DataError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  if (doc.value("format", "") != "fedlab-dataset" || doc.value("version", 0) != 1)
    throw DataError(path + ": not a dataset file");
  Dataset ds;
  ds.num_classes = doc.at("num_classes").get<int>();
  ds.vocab_size = doc.at("vocab_size").get<int>();
  const int seq_len = doc.at("seq_len").get<int>();
  ds.labels = doc.at("labels").get<std::vector<int>>();
  const auto& tok = doc.at("tokens");
  ds.tokens = IntMatrix(static_cast<Index>(tok.size()), seq_len);
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (static_cast<int>(tok[i].size()) != seq_len)
      throw DataError(path + ": ragged token row " + std::to_string(i));
    for (int j = 0; j < seq_len; ++j)
      ds.tokens(static_cast<Index>(i), j) = tok[i][j].get<int>();
  }
  ds.validate();
  return ds;
}

}  // namespace fedlab
