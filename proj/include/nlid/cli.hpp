#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace nlid::cli {

/// Sectioned key/value run settings checked against a fixed schema.
/// Every key has a default; unknown sections and keys are rejected.
class Config {
 public:
  struct Key {
    std::string name;
    std::string default_value;
    std::string help;
  };
  struct Section {
    std::string name;
    std::vector<Key> keys;
  };
  static const std::vector<Section>& schema();

  /// INI text: "[section]" headers, "key = value" lines, ';' or '#'
  /// comment lines. Throws ConfigError naming the offending key.
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  /// "section.key" = value; throws ConfigError on an unknown key.
  void set(const std::string& dotted, const std::string& value);
  bool has(const std::string& section, const std::string& key) const;

  std::string get(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key) const;
  int get_int(const std::string& section, const std::string& key) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  /// Comma-separated list, items trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& section, const std::string& key, char sep = ',') const;
  std::vector<Eigen::Index> get_sizes(const std::string& section, const std::string& key) const;
  std::vector<double> get_doubles(const std::string& section, const std::string& key) const;

  /// INI text with every key of the listed sections (explicit or default).
  std::string resolved(const std::vector<std::string>& sections) const;

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

struct Series {
  std::string label;
  Eigen::VectorXd values;
};

/// Line plot of several series over a common x axis, as an SVG document.
std::string line_plot_svg(const std::string& title, const Eigen::VectorXd& x, const std::vector<Series>& series);

/// Runs one task. `args` excludes the program name. Returns the process
/// exit code: 0 success, 1 internal error, 2 configuration error, 3 data
/// error, 4 numerical failure. Failures also write error.json to the
/// output directory when it can be created.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nlid::cli
