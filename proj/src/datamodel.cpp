#include "mlmi/datamodel.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

namespace mlmi {

namespace {

std::string_view trim_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

double parse_real(std::string_view field, std::size_t line, const char* column) {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (!field.empty() && *first == '+') {
        ++first;
    }
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw ParseError(line, std::string("invalid number in column ") + column + ": '" + std::string(field) + "'");
    }
    return v;
}

}  // namespace

const char* to_string(Variable v) { return v == Variable::x ? "x" : "y"; }

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

TwoLevelDataset TwoLevelDataset::from_columns(std::vector<std::int64_t> labels, std::vector<double> x,
                                              std::vector<double> y, std::vector<bool> x_observed,
                                              std::vector<bool> y_observed) {
    const std::size_t n = labels.size();
    if (x.size() != n || y.size() != n) {
        throw std::invalid_argument("TwoLevelDataset: column lengths differ");
    }
    if (x_observed.empty()) x_observed.assign(n, true);
    if (y_observed.empty()) y_observed.assign(n, true);
    if (x_observed.size() != n || y_observed.size() != n) {
        throw std::invalid_argument("TwoLevelDataset: mask length differs from row count");
    }
    TwoLevelDataset ds;
    ds.labels_ = std::move(labels);
    ds.x_ = std::move(x);
    ds.y_ = std::move(y);
    ds.x_obs_ = std::move(x_observed);
    ds.y_obs_ = std::move(y_observed);
    for (std::size_t i = 0; i < n; ++i) {
        if (!ds.x_obs_[i]) ds.x_[i] = 0.0;
        if (!ds.y_obs_[i]) ds.y_[i] = 0.0;
    }
    ds.index_groups();
    return ds;
}

void TwoLevelDataset::index_groups() {
    group_index_.assign(labels_.size(), 0);
    group_labels_.clear();
    group_rows_.clear();
    std::unordered_map<std::int64_t, std::size_t> seen;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        auto [it, inserted] = seen.try_emplace(labels_[i], group_labels_.size());
        if (inserted) {
            group_labels_.push_back(labels_[i]);
            group_rows_.emplace_back();
        }
        group_index_[i] = it->second;
        group_rows_[it->second].push_back(i);
    }
}

bool TwoLevelDataset::observed(Variable v, std::size_t row) const {
    return v == Variable::x ? x_obs_.at(row) : y_obs_.at(row);
}

double TwoLevelDataset::value(Variable v, std::size_t row) const {
    if (!observed(v, row)) {
        throw std::logic_error(std::string("read of masked cell ") + to_string(v) + " in row " + std::to_string(row));
    }
    return v == Variable::x ? x_[row] : y_[row];
}

std::optional<double> TwoLevelDataset::get(Variable v, std::size_t row) const {
    if (!observed(v, row)) {
        return std::nullopt;
    }
    return v == Variable::x ? x_[row] : y_[row];
}

std::size_t TwoLevelDataset::missing_count(Variable v) const {
    const auto& mask = v == Variable::x ? x_obs_ : y_obs_;
    std::size_t n = 0;
    for (bool o : mask) n += o ? 0 : 1;
    return n;
}

GroupView TwoLevelDataset::group(std::size_t g) const {
    const auto& rows = group_rows_.at(g);
    return GroupView{group_labels_[g], g, std::span<const std::size_t>(rows)};
}

std::vector<GroupView> TwoLevelDataset::group_views() const {
    std::vector<GroupView> out;
    out.reserve(groups());
    for (std::size_t g = 0; g < groups(); ++g) {
        out.push_back(group(g));
    }
    return out;
}

TwoLevelDataset TwoLevelDataset::with_missing(Variable v, const std::vector<bool>& missing) const {
    if (missing.size() != rows()) {
        throw std::invalid_argument("with_missing: mask length differs from row count");
    }
    TwoLevelDataset out = *this;
    auto& mask = v == Variable::x ? out.x_obs_ : out.y_obs_;
    auto& vals = v == Variable::x ? out.x_ : out.y_;
    for (std::size_t i = 0; i < rows(); ++i) {
        if (missing[i]) {
            mask[i] = false;
            vals[i] = 0.0;
        }
    }
    return out;
}

TwoLevelDataset TwoLevelDataset::with_imputed(Variable v, std::span<const double> fill) const {
    if (fill.size() != rows()) {
        throw std::invalid_argument("with_imputed: fill length differs from row count");
    }
    TwoLevelDataset out = *this;
    auto& mask = v == Variable::x ? out.x_obs_ : out.y_obs_;
    auto& vals = v == Variable::x ? out.x_ : out.y_;
    for (std::size_t i = 0; i < rows(); ++i) {
        if (!mask[i]) {
            vals[i] = fill[i];
            mask[i] = true;
        }
    }
    return out;
}

TwoLevelDataset read_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) {
        throw ParseError(1, "missing header");
    }
    if (trim_cr(line) != "group,x,y") {
        throw ParseError(1, "header must be exactly 'group,x,y'");
    }

    std::vector<std::int64_t> labels;
    std::vector<double> x, y;
    std::vector<bool> xo, yo;
    bool saw_blank = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view s = trim_cr(line);
        if (s.empty()) {
            saw_blank = true;
            continue;
        }
        if (saw_blank) {
            throw ParseError(line_no - 1, "blank line inside data");
        }
        const auto fields = split_fields(s);
        if (fields.size() != 3) {
            throw ParseError(line_no, "expected 3 fields, found " + std::to_string(fields.size()));
        }
        std::int64_t label = 0;
        auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
        if (fields[0].empty() || ec != std::errc() || ptr != fields[0].data() + fields[0].size()) {
            throw ParseError(line_no, "invalid group label '" + std::string(fields[0]) + "'");
        }
        labels.push_back(label);
        xo.push_back(!fields[1].empty());
        x.push_back(fields[1].empty() ? 0.0 : parse_real(fields[1], line_no, "x"));
        yo.push_back(!fields[2].empty());
        y.push_back(fields[2].empty() ? 0.0 : parse_real(fields[2], line_no, "y"));
    }
    return TwoLevelDataset::from_columns(std::move(labels), std::move(x), std::move(y), std::move(xo), std::move(yo));
}

TwoLevelDataset read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return read_csv(in);
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_csv(const TwoLevelDataset& ds, std::ostream& out) {
    out << "group,x,y\n";
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        out << ds.label(i) << ',';
        if (auto v = ds.get(Variable::x, i)) out << format_real(*v);
        out << ',';
        if (auto v = ds.get(Variable::y, i)) out << format_real(*v);
        out << '\n';
    }
    if (!out) {
        throw std::runtime_error("write_csv: output stream failure");
    }
}

void write_csv(const TwoLevelDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_csv(ds, out);
}

TwoLevelDataset listwise_delete(const TwoLevelDataset& ds, std::span<const Variable> variables) {
    std::vector<std::int64_t> labels;
    std::vector<double> x, y;
    std::vector<bool> xo, yo;
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        bool keep = true;
        for (Variable v : variables) {
            keep = keep && ds.observed(v, i);
        }
        if (!keep) continue;
        labels.push_back(ds.label(i));
        const auto xv = ds.get(Variable::x, i);
        const auto yv = ds.get(Variable::y, i);
        x.push_back(xv.value_or(0.0));
        y.push_back(yv.value_or(0.0));
        xo.push_back(xv.has_value());
        yo.push_back(yv.has_value());
    }
    return TwoLevelDataset::from_columns(std::move(labels), std::move(x), std::move(y), std::move(xo), std::move(yo));
}

TwoLevelDataset listwise_delete(const TwoLevelDataset& ds) {
    constexpr Variable both[] = {Variable::x, Variable::y};
    return listwise_delete(ds, both);
}

}  // namespace mlmi
