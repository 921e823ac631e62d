#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlmi {

enum class Variable { x, y };

[[nodiscard]] constexpr Variable other(Variable v) { return v == Variable::x ? Variable::y : Variable::x; }
[[nodiscard]] const char* to_string(Variable v);

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what);
    [[nodiscard]] std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Rows belonging to one group, in dataset order.
struct GroupView {
    std::int64_t label;
    std::size_t index;
    std::span<const std::size_t> rows;
};

/// Two-level dataset with columns x and y and a per-cell observed mask.
///
/// Group labels are opaque integers; groups are indexed 0..G-1 in order of
/// first appearance. Reading a masked cell through value() throws, so no
/// consumer can do arithmetic on a missing value by accident. Instances are
/// immutable; the with_* members return modified copies.
class TwoLevelDataset {
public:
    TwoLevelDataset() = default;

    /// Observed masks default to "all observed" when empty. Values stored
    /// under a masked cell are discarded.
    static TwoLevelDataset from_columns(std::vector<std::int64_t> labels, std::vector<double> x,
                                        std::vector<double> y, std::vector<bool> x_observed = {},
                                        std::vector<bool> y_observed = {});

    [[nodiscard]] std::size_t rows() const { return labels_.size(); }
    [[nodiscard]] std::size_t groups() const { return group_labels_.size(); }
    [[nodiscard]] bool empty() const { return labels_.empty(); }

    [[nodiscard]] std::int64_t label(std::size_t row) const { return labels_.at(row); }
    [[nodiscard]] std::size_t group_index(std::size_t row) const { return group_index_.at(row); }
    [[nodiscard]] std::int64_t group_label(std::size_t g) const { return group_labels_.at(g); }

    [[nodiscard]] bool observed(Variable v, std::size_t row) const;
    /// Throws std::logic_error when the cell is masked.
    [[nodiscard]] double value(Variable v, std::size_t row) const;
    [[nodiscard]] std::optional<double> get(Variable v, std::size_t row) const;

    [[nodiscard]] std::size_t missing_count(Variable v) const;
    [[nodiscard]] bool complete() const { return missing_count(Variable::x) == 0 && missing_count(Variable::y) == 0; }

    [[nodiscard]] GroupView group(std::size_t g) const;
    [[nodiscard]] std::vector<GroupView> group_views() const;

    /// Copy with the given cells additionally masked (missing[i] == true).
    [[nodiscard]] TwoLevelDataset with_missing(Variable v, const std::vector<bool>& missing) const;

    /// Copy in which every masked cell of v takes fill[row] and becomes
    /// observed. Observed cells are copied unchanged.
    [[nodiscard]] TwoLevelDataset with_imputed(Variable v, std::span<const double> fill) const;

    friend bool operator==(const TwoLevelDataset&, const TwoLevelDataset&) = default;

private:
    void index_groups();

    std::vector<std::int64_t> labels_;
    std::vector<double> x_;
    std::vector<double> y_;
    std::vector<bool> x_obs_;
    std::vector<bool> y_obs_;

    std::vector<std::size_t> group_index_;
    std::vector<std::int64_t> group_labels_;
    std::vector<std::vector<std::size_t>> group_rows_;
};

/// Header must be exactly `group,x,y`; an empty field marks a missing cell.
[[nodiscard]] TwoLevelDataset read_csv(std::istream& in);
[[nodiscard]] TwoLevelDataset read_csv(const std::filesystem::path& path);

/// Missing cells become empty fields; reals use 17 significant digits.
void write_csv(const TwoLevelDataset& ds, std::ostream& out);
void write_csv(const TwoLevelDataset& ds, const std::filesystem::path& path);

/// Drops rows with any masked cell among `variables`; groups left without
/// rows disappear.
[[nodiscard]] TwoLevelDataset listwise_delete(const TwoLevelDataset& ds, std::span<const Variable> variables);
[[nodiscard]] TwoLevelDataset listwise_delete(const TwoLevelDataset& ds);

/// Formats a real with 17 significant digits ("%.17g").
[[nodiscard]] std::string format_real(double v);

}  // namespace mlmi
