#include "adaptlm/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "adaptlm/errors.hpp"
#include "adaptlm/rng.hpp"

namespace adaptlm {

std::vector<std::string> split_tsv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    std::string field;
    if (pos < line.size() && line[pos] == '"') {
      ++pos;
      bool closed = false;
      while (pos < line.size()) {
        if (line[pos] == '"') {
          if (pos + 1 < line.size() && line[pos + 1] == '"') {
            field.push_back('"');
            pos += 2;
            continue;
          }
          ++pos;
          closed = true;
          break;
        }
        field.push_back(line[pos++]);
      }
      if (!closed) throw FormatError("unterminated quoted field");
      if (pos < line.size() && line[pos] != '\t') throw FormatError("characters after closing quote");
    } else {
      const auto tab = line.find('\t', pos);
      const auto end = tab == std::string_view::npos ? line.size() : tab;
      field.assign(line.substr(pos, end - pos));
      pos = end;
    }
    fields.push_back(std::move(field));
    if (pos >= line.size()) break;
    ++pos;  // tab
    if (pos == line.size()) {
      fields.emplace_back();
      break;
    }
  }
  return fields;
}

std::string tsv_escape(std::string_view field) {
  const bool needs_quotes = field.find('\t') != std::string_view::npos || (!field.empty() && field.front() == '"');
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

namespace {

struct TsvTable {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // line number, fields
};

TsvTable read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  TsvTable table;
  std::string line;
  std::size_t number = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    try {
      fields = split_tsv_line(line);
    } catch (const FormatError& e) {
      throw FormatError(located(path.string(), number, e.what()));
    }
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw FormatError(located(path.string(), number,
                                "expected " + std::to_string(table.header.size()) + " fields, got " +
                                    std::to_string(fields.size())));
    }
    table.rows.emplace_back(number, std::move(fields));
  }
  if (!have_header && number > 0) throw FormatError(path.string() + ": missing header row");
  return table;
}

std::size_t column_index(const TsvTable& table, const std::string& name, const std::filesystem::path& path) {
  if (table.header.empty()) return 0;
  auto it = std::find(table.header.begin(), table.header.end(), name);
  if (it == table.header.end()) throw FormatError(path.string() + ": header has no column '" + name + "'");
  return static_cast<std::size_t>(it - table.header.begin());
}

void write_lines(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string format_score(double score) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), score);
  return std::string(buf, ptr);
}

}  // namespace

std::size_t LabeledDataset::class_index(const std::string& label) const {
  auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) throw DataError("label '" + label + "' is not in the declared label set");
  return static_cast<std::size_t>(it - classes.begin());
}

std::vector<ScoredInstance> load_scored(const std::filesystem::path& path, const ScoredColumns& columns) {
  const TsvTable table = read_tsv(path);
  if (table.header.empty()) return {};
  const auto id_col = column_index(table, columns.id, path);
  const auto text_col = column_index(table, columns.text, path);
  const auto score_col = column_index(table, columns.score, path);
  std::vector<ScoredInstance> out;
  out.reserve(table.rows.size());
  for (const auto& [number, fields] : table.rows) {
    const std::string& raw = fields[score_col];
    double score = 0.0;
    const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), score);
    if (ec != std::errc{} || ptr != raw.data() + raw.size() || !std::isfinite(score)) {
      throw FormatError(located(path.string(), number, "score '" + raw + "' is not a number"));
    }
    if (score < 0.0 || score > 1.0) {
      throw FormatError(located(path.string(), number, "score " + raw + " outside [0, 1]"));
    }
    out.push_back(ScoredInstance{fields[id_col], fields[text_col], score});
  }
  return out;
}

void save_scored(std::span<const ScoredInstance> instances, const std::filesystem::path& path,
                 const ScoredColumns& columns) {
  std::string content = columns.id + '\t' + columns.text + '\t' + columns.score + '\n';
  for (const auto& inst : instances) {
    content += tsv_escape(inst.id) + '\t' + tsv_escape(inst.text) + '\t' + format_score(inst.score) + '\n';
  }
  write_lines(path, content);
}

LabeledDataset load_labeled(const std::filesystem::path& path, const LabeledColumns& columns,
                            std::vector<std::string> declared_classes) {
  const TsvTable table = read_tsv(path);
  LabeledDataset ds;
  if (!table.header.empty()) {
    const auto id_col = column_index(table, columns.id, path);
    const auto text_col = column_index(table, columns.text, path);
    const auto label_col = column_index(table, columns.label, path);
    for (const auto& [number, fields] : table.rows) {
      if (fields[label_col].empty()) throw FormatError(located(path.string(), number, "empty label"));
      ds.instances.push_back(LabeledInstance{fields[id_col], fields[text_col], fields[label_col]});
    }
  }
  if (declared_classes.empty()) {
    std::set<std::string> seen;
    for (const auto& inst : ds.instances) seen.insert(inst.label);
    ds.classes.assign(seen.begin(), seen.end());
  } else {
    ds.classes = std::move(declared_classes);
    const std::set<std::string> allowed(ds.classes.begin(), ds.classes.end());
    if (allowed.size() != ds.classes.size()) throw ConfigError("declared label set contains duplicates");
    for (std::size_t i = 0; i < ds.instances.size(); ++i) {
      if (!allowed.count(ds.instances[i].label)) {
        throw DataError(located(path.string(), table.rows[i].first,
                                "label '" + ds.instances[i].label + "' is not in the declared label set"));
      }
    }
  }
  return ds;
}

void save_labeled(std::span<const LabeledInstance> instances, const std::filesystem::path& path,
                  const LabeledColumns& columns) {
  std::string content = columns.id + '\t' + columns.text + '\t' + columns.label + '\n';
  for (const auto& inst : instances) {
    content += tsv_escape(inst.id) + '\t' + tsv_escape(inst.text) + '\t' + tsv_escape(inst.label) + '\n';
  }
  write_lines(path, content);
}

std::vector<ScoredInstance> select_by_threshold(std::span<const ScoredInstance> instances, double lo, double hi) {
  if (!(lo >= 0.0 && lo <= hi && hi <= 1.0)) {
    throw ContractError("select_by_threshold: need 0 <= lo <= hi <= 1, got lo=" + format_score(lo) +
                        " hi=" + format_score(hi));
  }
  std::vector<ScoredInstance> out;
  for (const auto& inst : instances) {
    if (inst.score >= lo && inst.score <= hi) out.push_back(inst);
  }
  return out;
}

std::vector<std::size_t> split_sizes(std::size_t n, std::span<const double> ratios) {
  if (ratios.empty()) throw ContractError("split: at least one ratio required");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ContractError("split: ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("split: ratios must sum to 1, got " + format_score(total));

  std::vector<std::size_t> sizes(ratios.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double quota = ratios[i] * static_cast<double>(n);
    // Guard against 0.6 * 10 landing at 5.999...
    const double floored = std::floor(quota + 1e-9);
    sizes[i] = static_cast<std::size_t>(floored);
    assigned += sizes[i];
    remainders.emplace_back(quota - floored, i);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[remainders[k % remainders.size()].second];
  return sizes;
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const SplitSpec& spec) {
  if (n == 0 && spec.ratios.size() > 1) throw DataError("split: cannot partition an empty dataset into parts");
  const auto sizes = split_sizes(n, spec.ratios);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(spec.seed, "split");
  shuffle_in_place(order, rng);
  std::vector<std::vector<std::size_t>> parts;
  std::size_t offset = 0;
  for (auto size : sizes) {
    parts.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(offset),
                       order.begin() + static_cast<std::ptrdiff_t>(offset + size));
    offset += size;
  }
  return parts;
}

template <typename Item>
std::vector<std::vector<Item>> split(std::span<const Item> items, const SplitSpec& spec) {
  std::vector<std::vector<Item>> parts;
  for (const auto& part : split_indices(items.size(), spec)) {
    auto& out = parts.emplace_back();
    out.reserve(part.size());
    for (auto i : part) out.push_back(items[i]);
  }
  return parts;
}

template std::vector<std::vector<ScoredInstance>> split(std::span<const ScoredInstance>, const SplitSpec&);
template std::vector<std::vector<LabeledInstance>> split(std::span<const LabeledInstance>, const SplitSpec&);
template std::vector<std::vector<Example>> split(std::span<const Example>, const SplitSpec&);
template std::vector<std::vector<std::string>> split(std::span<const std::string>, const SplitSpec&);

Batch collate(std::span<const Example> examples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("collate: empty batch");
  Batch batch;
  batch.batch_size = indices.size();
  for (auto i : indices) {
    const auto& seq = examples[i].sequence;
    if (seq.ids.size() != seq.attention_mask.size()) throw ContractError("collate: malformed sequence");
    batch.seq_len = std::max(batch.seq_len, seq.real_length());
  }
  batch.ids.reserve(batch.batch_size * batch.seq_len);
  batch.attention_mask.reserve(batch.batch_size * batch.seq_len);
  for (auto i : indices) {
    const auto& seq = examples[i].sequence;
    const TokenId pad = seq.ids.size() > seq.real_length() ? seq.ids.back() : 0;
    for (std::size_t t = 0; t < batch.seq_len; ++t) {
      const bool inside = t < seq.ids.size();
      batch.ids.push_back(inside ? seq.ids[t] : pad);
      batch.attention_mask.push_back(inside ? seq.attention_mask[t] : 0);
    }
    batch.labels.push_back(examples[i].label);
    batch.source_indices.push_back(i);
  }
  return batch;
}

BatchIterator::BatchIterator(std::span<const Example> examples, std::size_t batch_size, bool shuffle,
                             std::uint64_t seed)
    : examples_(examples), batch_size_(batch_size), order_(examples.size()) {
  if (batch_size == 0) throw ContractError("make_batches: batch_size must be at least 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    Rng rng = make_rng(seed, "shuffle");
    shuffle_in_place(order_, rng);
  }
}

Batch BatchIterator::next() {
  if (!has_next()) throw ContractError("BatchIterator: no batches left");
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  Batch batch = collate(examples_, std::span<const std::size_t>(order_).subspan(cursor_, end - cursor_));
  cursor_ = end;
  return batch;
}

std::size_t BatchIterator::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

BatchIterator make_batches(std::span<const Example> examples, std::size_t batch_size, bool shuffle, std::uint64_t seed) {
  return BatchIterator(examples, batch_size, shuffle, seed);
}

}  // namespace adaptlm
