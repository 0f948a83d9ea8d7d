#include "dynbsde/io.hpp"

#include <cstdio>

#include "dynbsde/errors.hpp"

namespace dynbsde {

std::string fmt12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

CsvWriter::CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), cols_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
  os_ << '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != cols_) throw DomainError("csv: row width does not match the header");
  for (std::size_t i = 0; i < values.size(); ++i) os_ << (i ? "," : "") << fmt12(values[i]);
  os_ << '\n';
}

}  // namespace dynbsde
