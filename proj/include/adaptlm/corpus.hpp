#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptlm/tokenizer.hpp"

namespace adaptlm {

struct ScoredInstance {
  std::string id;
  std::string text;
  double score = 0.0;

  friend bool operator==(const ScoredInstance&, const ScoredInstance&) = default;
};

struct LabeledInstance {
  std::string id;
  std::string text;
  std::string label;

  friend bool operator==(const LabeledInstance&, const LabeledInstance&) = default;
};

struct LabeledDataset {
  std::vector<std::string> classes;  // declared label set, index = class id
  std::vector<LabeledInstance> instances;

  std::size_t class_index(const std::string& label) const;
};

struct ScoredColumns {
  std::string id = "id";
  std::string text = "text";
  std::string score = "average";
};

struct LabeledColumns {
  std::string id = "id";
  std::string text = "text";
  std::string label = "label";
};

// Splits one TSV line. A field that starts with '"' is quoted: it may contain
// tabs, and "" inside it is a literal quote. Throws FormatError on an
// unterminated quote.
std::vector<std::string> split_tsv_line(std::string_view line);

// Quotes a field when it contains a tab or quote, or starts with one.
std::string tsv_escape(std::string_view field);

std::vector<ScoredInstance> load_scored(const std::filesystem::path& path, const ScoredColumns& columns = {});
void save_scored(std::span<const ScoredInstance> instances, const std::filesystem::path& path,
                 const ScoredColumns& columns = {});

// When `declared_classes` is empty the label set is the sorted set of labels
// present in the file; otherwise unknown labels are a DataError.
LabeledDataset load_labeled(const std::filesystem::path& path, const LabeledColumns& columns = {},
                            std::vector<std::string> declared_classes = {});
void save_labeled(std::span<const LabeledInstance> instances, const std::filesystem::path& path,
                  const LabeledColumns& columns = {});

// Instances with lo <= score <= hi, in input order.
std::vector<ScoredInstance> select_by_threshold(std::span<const ScoredInstance> instances, double lo, double hi);

struct SplitSpec {
  std::vector<double> ratios;
  std::uint64_t seed = 0;
};

// Partition sizes for n items by largest-remainder rounding; remainder ties
// go to the earlier part.
std::vector<std::size_t> split_sizes(std::size_t n, std::span<const double> ratios);

// Seeded shuffle, then contiguous partition by split_sizes.
template <typename Item>
std::vector<std::vector<Item>> split(std::span<const Item> items, const SplitSpec& spec);

// Index form of split(); shared by every item type.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const SplitSpec& spec);

struct Example {
  TokenizedSequence sequence;
  std::int32_t label = -1;  // class id, or -1 for unlabeled text
};

struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> ids;                  // [batch_size x seq_len]
  std::vector<std::uint8_t> attention_mask;  // [batch_size x seq_len]
  std::vector<std::int32_t> labels;          // per example (classification)
  std::vector<TokenId> mlm_targets;          // [batch_size x seq_len], filled by MLM collation
  std::vector<std::uint8_t> mlm_mask;        // [batch_size x seq_len]
  std::vector<std::size_t> source_indices;   // positions in the dataset
};

// Rows are trimmed to the longest real sequence in the batch; every row has
// the same length.
Batch collate(std::span<const Example> examples, std::span<const std::size_t> indices);

// Fixed-size batches over a dataset; the last batch may be partial. Order is
// the input order, or a seeded permutation when shuffling.
class BatchIterator {
 public:
  BatchIterator(std::span<const Example> examples, std::size_t batch_size, bool shuffle, std::uint64_t seed);

  bool has_next() const { return cursor_ < order_.size(); }
  Batch next();
  std::size_t num_batches() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  std::span<const Example> examples_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

BatchIterator make_batches(std::span<const Example> examples, std::size_t batch_size, bool shuffle, std::uint64_t seed);

}  // namespace adaptlm
