#include "headprobe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "headprobe/error.hpp"

namespace headprobe {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

bool read_line(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

std::optional<int> parse_int_cell(const std::string& cell, std::size_t row, const std::string& column) {
    std::string_view s(cell);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    int value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec == std::errc() && ptr == s.data() + s.size()) return value;
    // Tolerate "7.0" style integers.
    double d = 0;
    auto [dptr, dec] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (dec == std::errc() && dptr == s.data() + s.size() && d == std::floor(d)) return static_cast<int>(d);
    fail(ErrorKind::Validation,
         "row " + std::to_string(row) + ": column '" + column + "' is not an integer ('" + cell + "')");
}

struct Table {
    std::vector<std::string> columns;
    std::unordered_map<std::string, std::size_t> index;

    std::size_t column(const std::string& name, const std::string& role) const {
        auto it = index.find(name);
        if (it == index.end()) fail(ErrorKind::Config, "schema error: " + role + " column '" + name + "' missing");
        return it->second;
    }
};

TableSchema schema_from_json(const nlohmann::json& j) {
    TableSchema s;
    s.id_column = j.value("id", s.id_column);
    s.prompt_column = j.value("prompt", s.prompt_column);
    s.text_column = j.value("text", s.text_column);
    if (j.contains("traits")) s.trait_columns = j.at("traits").get<std::map<std::string, std::string>>();
    return s;
}

std::vector<EssayRecord> parse_table(const std::filesystem::path& path, const TableSchema& schema,
                                     const RangeTable& ranges, bool with_prompt_and_text) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open essay table '" + path.string() + "'");
    std::string line;
    if (!read_line(in, line)) fail(ErrorKind::Format, "essay table '" + path.string() + "' has no header row");

    Table t;
    t.columns = split_tabs(line);
    for (std::size_t i = 0; i < t.columns.size(); ++i) t.index.emplace(t.columns[i], i);
    const auto id_col = t.column(schema.id_column, "id");
    std::size_t prompt_col = 0, text_col = 0;
    if (with_prompt_and_text) {
        prompt_col = t.column(schema.prompt_column, "prompt");
        text_col = t.column(schema.text_column, "text");
    }
    std::vector<std::pair<std::string, std::size_t>> trait_cols;
    for (const auto& [trait, col] : schema.trait_columns) trait_cols.emplace_back(trait, t.column(col, "trait"));

    std::vector<EssayRecord> records;
    std::unordered_set<std::string> seen;
    std::size_t row = 0;
    while (read_line(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto cells = split_tabs(line);
        if (cells.size() > t.columns.size()) {
            fail(ErrorKind::Format, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                        " fields, header has " + std::to_string(t.columns.size()));
        }
        cells.resize(t.columns.size());

        EssayRecord rec;
        rec.essay_id = cells[id_col];
        if (rec.essay_id.empty()) fail(ErrorKind::Validation, "row " + std::to_string(row) + ": empty essay id");
        if (!seen.insert(rec.essay_id).second) {
            fail(ErrorKind::Validation, "row " + std::to_string(row) + ": duplicate essay id '" + rec.essay_id + "'");
        }
        if (with_prompt_and_text) {
            auto p = parse_int_cell(cells[prompt_col], row, schema.prompt_column);
            if (!p) fail(ErrorKind::Validation, "row " + std::to_string(row) + ": missing prompt id");
            rec.prompt_id = *p;
            rec.essay_text = cells[text_col];
        }
        for (const auto& [trait, col] : trait_cols) {
            auto score = parse_int_cell(cells[col], row, t.columns[col]);
            if (!score) continue;
            rec.scores[trait] = *score;
            if (!with_prompt_and_text) continue;
            const auto* range = ranges.find(rec.prompt_id, trait);
            if (!range) {
                fail(ErrorKind::Validation, "row " + std::to_string(row) + ": trait '" + trait +
                                                "' scored but prompt " + std::to_string(rec.prompt_id) +
                                                " has no range for it");
            }
            if (!range->contains(*score)) {
                fail(ErrorKind::Validation, "row " + std::to_string(row) + ": trait '" + trait + "' score " +
                                                std::to_string(*score) + " outside [" +
                                                std::to_string(range->min_score) + ", " +
                                                std::to_string(range->max_score) + "]");
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace

RangeTable::RangeTable(const std::vector<TraitRange>& ranges) {
    for (const auto& r : ranges) {
        if (r.min_score >= r.max_score) {
            fail(ErrorKind::Config, "score range for prompt " + std::to_string(r.prompt_id) + " trait '" + r.trait +
                                        "' needs min < max");
        }
        if (!ranges_.emplace(std::make_pair(r.prompt_id, r.trait), r).second) {
            fail(ErrorKind::Config, "duplicate score range for prompt " + std::to_string(r.prompt_id) + " trait '" +
                                        r.trait + "'");
        }
    }
}

const TraitRange* RangeTable::find(int prompt_id, const std::string& trait) const {
    auto it = ranges_.find({prompt_id, trait});
    return it == ranges_.end() ? nullptr : &it->second;
}

const TraitRange& RangeTable::at(int prompt_id, const std::string& trait) const {
    const auto* r = find(prompt_id, trait);
    if (!r) fail(ErrorKind::NotFound, "no score range for prompt " + std::to_string(prompt_id) + " trait '" + trait + "'");
    return *r;
}

std::vector<int> RangeTable::prompts_with(const std::string& trait) const {
    std::vector<int> out;
    for (const auto& [key, r] : ranges_) {
        if (key.second == trait) out.push_back(key.first);
    }
    return out;
}

std::vector<std::string> RangeTable::traits_of(int prompt_id) const {
    std::vector<std::string> out;
    for (const auto& [key, r] : ranges_) {
        if (key.first == prompt_id) out.push_back(key.second);
    }
    return out;
}

DatasetMetadata load_metadata(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Config, "cannot open dataset metadata '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
        DatasetMetadata m;
        m.prompts = j.at("prompts").get<std::vector<int>>();
        m.traits = j.at("traits").get<std::vector<std::string>>();
        if (j.contains("excluded_traits")) m.excluded_traits = j.at("excluded_traits").get<std::set<std::string>>();
        for (const auto& r : j.at("ranges")) {
            m.ranges.push_back({r.at("prompt").get<int>(), r.at("trait").get<std::string>(), r.at("min").get<int>(),
                                r.at("max").get<int>()});
        }
        m.columns = schema_from_json(j.at("columns"));
        if (j.contains("trait_table")) {
            const auto& tt = j.at("trait_table");
            std::filesystem::path p = tt.at("path").get<std::string>();
            if (p.is_relative()) p = path.parent_path() / p;
            m.trait_table = p;
            m.trait_table_columns = schema_from_json(tt.at("columns"));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, "dataset metadata '" + path.string() + "': " + e.what());
    }
}

std::vector<std::string> retained_traits(const DatasetMetadata& meta) {
    RangeTable table(meta.ranges);
    std::vector<std::string> out;
    for (const auto& trait : meta.traits) {
        if (meta.excluded_traits.count(trait)) continue;
        const auto prompts = table.prompts_with(trait);
        if (prompts.size() < 2) {
            fail(ErrorKind::Config, "trait '" + trait + "' occurs in " + std::to_string(prompts.size()) +
                                        " prompt(s); single-prompt traits must be listed in excluded_traits");
        }
        out.push_back(trait);
    }
    return out;
}

std::vector<EssayRecord> parse_essay_table(const std::filesystem::path& path, const TableSchema& schema,
                                           const std::vector<TraitRange>& ranges) {
    return parse_table(path, schema, RangeTable(ranges), true);
}

std::size_t merge_trait_scores(std::vector<EssayRecord>& records, const std::vector<EssayRecord>& extra,
                               const RangeTable& ranges) {
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < records.size(); ++i) by_id.emplace(records[i].essay_id, i);
    std::size_t matched = 0;
    for (const auto& e : extra) {
        auto it = by_id.find(e.essay_id);
        if (it == by_id.end()) continue;
        ++matched;
        auto& rec = records[it->second];
        for (const auto& [trait, score] : e.scores) {
            const auto& range = ranges.at(rec.prompt_id, trait);
            if (!range.contains(score)) {
                fail(ErrorKind::Validation, "essay '" + rec.essay_id + "': trait '" + trait + "' score " +
                                                std::to_string(score) + " outside its range");
            }
            auto [pos, inserted] = rec.scores.emplace(trait, score);
            if (!inserted && pos->second != score) {
                fail(ErrorKind::Validation, "essay '" + rec.essay_id + "': conflicting scores for trait '" + trait + "'");
            }
        }
    }
    return matched;
}

double normalize_score(int raw, const TraitRange& range) {
    if (!range.contains(raw)) {
        fail(ErrorKind::Range, "score " + std::to_string(raw) + " outside [" + std::to_string(range.min_score) +
                                   ", " + std::to_string(range.max_score) + "]");
    }
    return static_cast<double>(raw - range.min_score) / static_cast<double>(range.max_score - range.min_score);
}

int denormalize_and_round(double yhat, const TraitRange& range) {
    if (!(yhat >= 0.0 && yhat <= 1.0)) {
        fail(ErrorKind::Contract, "prediction " + std::to_string(yhat) + " outside [0, 1]");
    }
    const double scaled = yhat * (range.max_score - range.min_score) + range.min_score;
    const int rounded = static_cast<int>(std::floor(scaled + 0.5));
    return std::clamp(rounded, range.min_score, range.max_score);
}

std::vector<SplitPlan> make_prompt_wise_splits(const std::vector<EssayRecord>& records,
                                               const std::set<int>& excluded_train_prompts) {
    std::set<int> prompts;
    for (const auto& r : records) prompts.insert(r.prompt_id);
    if (prompts.size() < 2) {
        fail(ErrorKind::Validation, "prompt-wise splits need at least 2 prompts, found " + std::to_string(prompts.size()));
    }
    std::vector<SplitPlan> plans;
    for (int test : prompts) {
        SplitPlan plan;
        plan.test_prompt = test;
        for (int p : prompts) {
            if (p == test) continue;
            if (excluded_train_prompts.count(p)) {
                plan.excluded_train_prompts.insert(p);
            } else {
                plan.train_prompt_ids.insert(p);
            }
        }
        if (plan.train_prompt_ids.empty()) {
            fail(ErrorKind::Validation, "empty training set for test prompt " + std::to_string(test) +
                                            ": exclusions cover every other prompt");
        }
        plans.push_back(std::move(plan));
    }
    return plans;
}

std::vector<std::size_t> Dataset::select(const std::set<int>& prompts, const std::string& trait) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (prompts.count(r.prompt_id) && r.scores.count(trait)) out.push_back(i);
    }
    return out;
}

Dataset load_dataset(const std::filesystem::path& table, const std::filesystem::path& metadata_path) {
    Dataset ds;
    ds.meta = load_metadata(metadata_path);
    ds.traits = retained_traits(ds.meta);
    ds.ranges = RangeTable(ds.meta.ranges);

    TableSchema schema = ds.meta.columns;
    for (const auto& t : ds.meta.excluded_traits) schema.trait_columns.erase(t);
    ds.records = parse_essay_table(table, schema, ds.meta.ranges);
    ds.merge_path = "single-table";

    if (ds.meta.trait_table) {
        TableSchema extra_schema = *ds.meta.trait_table_columns;
        for (const auto& t : ds.meta.excluded_traits) extra_schema.trait_columns.erase(t);
        auto extra = parse_table(*ds.meta.trait_table, extra_schema, ds.ranges, false);
        merge_trait_scores(ds.records, extra, ds.ranges);
        ds.merge_path = "joined";
    }

    const std::set<int> listed(ds.meta.prompts.begin(), ds.meta.prompts.end());
    for (const auto& r : ds.records) {
        if (!listed.count(r.prompt_id)) {
            fail(ErrorKind::Validation, "essay '" + r.essay_id + "' belongs to prompt " + std::to_string(r.prompt_id) +
                                            " which the metadata does not list");
        }
    }
    return ds;
}

}  // namespace headprobe
