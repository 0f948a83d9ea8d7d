#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dynbsde {

/// Decimal with 12 significant digits, as used in every CSV artifact.
std::string fmt12(double v);

/// Comma-delimited rows with LF endings.
class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header);
  void row(const std::vector<double>& values);

 private:
  std::ostream& os_;
  std::size_t cols_;
};

}  // namespace dynbsde
