#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace headprobe {

struct TraitRange {
    int prompt_id = 0;
    std::string trait;
    int min_score = 0;
    int max_score = 0;

    bool contains(int raw) const { return raw >= min_score && raw <= max_score; }
    bool operator==(const TraitRange&) const = default;
};

struct EssayRecord {
    std::string essay_id;
    int prompt_id = 0;
    std::string essay_text;
    // Absent entries mean the trait was not scored for this essay.
    std::map<std::string, int> scores;
};

// Maps logical fields to column names of a tab-separated table.
struct TableSchema {
    std::string id_column = "essay_id";
    std::string prompt_column = "essay_set";
    std::string text_column = "essay";
    std::map<std::string, std::string> trait_columns;  // trait -> column
};

struct SplitPlan {
    int test_prompt = 0;
    std::set<int> train_prompt_ids;
    std::set<int> excluded_train_prompts;
};

// Lookup of score ranges keyed by (prompt, trait).
class RangeTable {
public:
    RangeTable() = default;
    explicit RangeTable(const std::vector<TraitRange>& ranges);

    const TraitRange* find(int prompt_id, const std::string& trait) const;
    const TraitRange& at(int prompt_id, const std::string& trait) const;
    std::vector<int> prompts_with(const std::string& trait) const;
    std::vector<std::string> traits_of(int prompt_id) const;
    const std::map<std::pair<int, std::string>, TraitRange>& all() const { return ranges_; }

private:
    std::map<std::pair<int, std::string>, TraitRange> ranges_;
};

// Contents of the dataset-metadata JSON file.
struct DatasetMetadata {
    std::vector<int> prompts;
    std::vector<std::string> traits;
    std::set<std::string> excluded_traits;
    std::vector<TraitRange> ranges;
    TableSchema columns;
    // Optional second table joined on essay id (trait columns only).
    std::optional<std::filesystem::path> trait_table;
    std::optional<TableSchema> trait_table_columns;
};

DatasetMetadata load_metadata(const std::filesystem::path& path);

// Retained traits (configured minus excluded), each checked to occur in at
// least two prompts. Throws Error(Config) otherwise.
std::vector<std::string> retained_traits(const DatasetMetadata& meta);

std::vector<EssayRecord> parse_essay_table(const std::filesystem::path& path, const TableSchema& schema,
                                           const std::vector<TraitRange>& ranges);

// Adds the trait scores of `extra` (matched on essay id) into `records`.
// Returns the number of matched essays.
std::size_t merge_trait_scores(std::vector<EssayRecord>& records, const std::vector<EssayRecord>& extra,
                               const RangeTable& ranges);

double normalize_score(int raw, const TraitRange& range);
// Linear rescale then round half up; yhat must already lie in [0, 1].
int denormalize_and_round(double yhat, const TraitRange& range);

std::vector<SplitPlan> make_prompt_wise_splits(const std::vector<EssayRecord>& records,
                                               const std::set<int>& excluded_train_prompts);

struct Dataset {
    DatasetMetadata meta;
    RangeTable ranges;
    std::vector<EssayRecord> records;
    std::vector<std::string> traits;  // retained traits
    std::string merge_path;           // "single-table" or "joined"

    // Indices of records in `prompts` that carry a score for `trait`.
    std::vector<std::size_t> select(const std::set<int>& prompts, const std::string& trait) const;
};

Dataset load_dataset(const std::filesystem::path& table, const std::filesystem::path& metadata_path);

}  // namespace headprobe
