#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "miabench/core.hpp"
#include "miabench/errors.hpp"
#include "miabench/text.hpp"

namespace mia {

enum class DataFormat { Jsonl, Json, Csv };

inline const char* to_string(DataFormat f) {
    switch (f) {
        case DataFormat::Jsonl: return "jsonl";
        case DataFormat::Json: return "json";
        case DataFormat::Csv: return "csv";
    }
    return "?";
}

inline DataFormat data_format_from_string(std::string_view s) {
    if (s == "jsonl") return DataFormat::Jsonl;
    if (s == "json") return DataFormat::Json;
    if (s == "csv") return DataFormat::Csv;
    if (s == "parquet" || s == "huggingface") {
        throw UnsupportedFormat("format '" + std::string(s) +
                                "' is not supported; export the dataset to jsonl first");
    }
    throw UnsupportedFormat("unknown format '" + std::string(s) +
                            "' (known: jsonl, json, csv)");
}

struct DatasetConfig {
    std::string data_path;
    DataFormat format = DataFormat::Jsonl;
    std::string text_column = "input";
    std::string label_column = "label";
    std::optional<std::size_t> token_length;  // absent = no truncation
    bool space_delimited_language = true;
};

struct Dataset {
    std::vector<Sample> samples;
    DatasetConfig config;

    std::size_t member_count() const {
        std::size_t n = 0;
        for (const auto& s : samples) n += (s.label == Label::Member) ? 1 : 0;
        return n;
    }
};

namespace detail {

inline Label parse_label(const nlohmann::json& value, std::size_t row) {
    if (value.is_boolean()) {
        return value.get<bool>() ? Label::Member : Label::NonMember;
    }
    if (value.is_number_integer()) {
        const auto v = value.get<long long>();
        if (v == 1) return Label::Member;
        if (v == 0) return Label::NonMember;
    }
    if (value.is_string()) {
        const std::string& s = value.get_ref<const std::string&>();
        if (s == "1" || s == "true") return Label::Member;
        if (s == "0" || s == "false") return Label::NonMember;
    }
    throw IngestError("row " + std::to_string(row) +
                      ": label must be 1/0 or true/false, got " + value.dump());
}

// RFC 4180: quoted fields may contain commas, CR/LF and doubled quotes.
// Returns rows of raw fields; no type coercion.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    const std::size_t n = content.size();
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(std::move(row));
        row.clear();
    };
    while (i < n) {
        const char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < n && content[i + 1] == '"') {
                    field += '"';
                    i += 2;
                } else {
                    in_quotes = false;
                    ++i;
                }
            } else {
                field += c;
                ++i;
            }
            continue;
        }
        switch (c) {
            case '"':
                if (field.empty() && !field_started) {
                    in_quotes = true;
                } else {
                    field += c;  // stray quote inside an unquoted field
                }
                field_started = true;
                ++i;
                break;
            case ',':
                end_field();
                ++i;
                break;
            case '\r':
                if (i + 1 < n && content[i + 1] == '\n') ++i;
                end_row();
                ++i;
                break;
            case '\n':
                end_row();
                ++i;
                break;
            default:
                field += c;
                field_started = true;
                ++i;
                break;
        }
    }
    if (field_started || !field.empty() || !row.empty()) {
        end_row();
    }
    return rows;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open dataset file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

// One record as column name -> JSON value, independent of source format.
using Record = nlohmann::json;

inline std::vector<Record> load_records(const DatasetConfig& config) {
    const std::string content = read_file(config.data_path);
    std::vector<Record> records;
    switch (config.format) {
        case DataFormat::Jsonl: {
            std::istringstream in(content);
            std::string line;
            std::size_t row = 0;
            while (std::getline(in, line)) {
                if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
                    continue;
                }
                nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
                if (rec.is_discarded() || !rec.is_object()) {
                    throw IngestError("row " + std::to_string(row) + ": not a JSON object");
                }
                records.push_back(std::move(rec));
                ++row;
            }
            break;
        }
        case DataFormat::Json: {
            nlohmann::json root = nlohmann::json::parse(content, nullptr, false);
            if (root.is_discarded() || !root.is_array()) {
                throw IngestError("json dataset must be a top-level array of objects");
            }
            for (std::size_t row = 0; row < root.size(); ++row) {
                if (!root[row].is_object()) {
                    throw IngestError("row " + std::to_string(row) + ": not a JSON object");
                }
                records.push_back(root[row]);
            }
            break;
        }
        case DataFormat::Csv: {
            std::vector<std::vector<std::string>> rows = parse_csv(content);
            if (rows.empty()) {
                throw IngestError("csv dataset has no header row");
            }
            const std::vector<std::string>& header = rows.front();
            for (std::size_t r = 1; r < rows.size(); ++r) {
                const auto& cells = rows[r];
                if (cells.size() != header.size()) {
                    throw IngestError("row " + std::to_string(r - 1) + ": has " +
                                      std::to_string(cells.size()) + " fields, header has " +
                                      std::to_string(header.size()));
                }
                Record rec = nlohmann::json::object();
                for (std::size_t c = 0; c < header.size(); ++c) {
                    rec[header[c]] = cells[c];
                }
                records.push_back(std::move(rec));
            }
            break;
        }
    }
    return records;
}

}  // namespace detail

// Word-count truncation. Space-delimited mode also collapses runs of
// whitespace to single spaces so equal content yields equal cache keys.
inline std::string prepare_text(const std::string& text, std::optional<std::size_t> token_length,
                                bool space_delimited) {
    if (space_delimited) {
        std::vector<std::string> words = split_words(text);
        if (token_length && words.size() > *token_length) {
            words.resize(*token_length);
        }
        return join_words(words);
    }
    if (token_length) {
        return truncate_words(text, *token_length, false);
    }
    return text;
}

inline Dataset load_dataset(const DatasetConfig& config) {
    std::vector<detail::Record> records = detail::load_records(config);
    Dataset ds;
    ds.config = config;
    ds.samples.reserve(records.size());
    std::unordered_set<std::string> seen_ids;
    std::size_t members = 0;
    std::size_t non_members = 0;
    for (std::size_t row = 0; row < records.size(); ++row) {
        const detail::Record& rec = records[row];
        if (!rec.contains(config.text_column)) {
            throw SchemaError("row " + std::to_string(row) + ": missing column '" +
                              config.text_column + "'");
        }
        if (!rec.contains(config.label_column)) {
            throw SchemaError("row " + std::to_string(row) + ": missing column '" +
                              config.label_column + "'");
        }
        if (!rec[config.text_column].is_string()) {
            throw IngestError("row " + std::to_string(row) + ": column '" + config.text_column +
                              "' is not a string");
        }
        Sample s;
        s.text = prepare_text(rec[config.text_column].get<std::string>(), config.token_length,
                              config.space_delimited_language);
        if (s.text.empty()) {
            throw IngestError("row " + std::to_string(row) + ": text is empty after truncation");
        }
        s.label = detail::parse_label(rec[config.label_column], row);
        if (rec.contains("id")) {
            const auto& id = rec["id"];
            s.id = id.is_string() ? id.get<std::string>() : id.dump();
        } else {
            s.id = std::to_string(row);
        }
        if (!seen_ids.insert(s.id).second) {
            throw IngestError("row " + std::to_string(row) + ": duplicate id '" + s.id + "'");
        }
        (s.label == Label::Member ? members : non_members) += 1;
        ds.samples.push_back(std::move(s));
    }
    if (members == 0 || non_members == 0) {
        throw LabelBalanceError("dataset needs at least one member and one non-member, got " +
                                std::to_string(members) + " members / " +
                                std::to_string(non_members) + " non-members");
    }
    return ds;
}

// Re-serializes with the dataset's own column names plus the id, so loading
// the written file with the same config reproduces the dataset exactly.
inline void save_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open file for writing: " + path);
    }
    for (const Sample& s : ds.samples) {
        nlohmann::json rec = {{"id", s.id},
                              {ds.config.text_column, s.text},
                              {ds.config.label_column, s.label == Label::Member ? 1 : 0}};
        out << rec.dump() << '\n';
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

}  // namespace mia
