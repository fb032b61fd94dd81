#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>

#include "advids/error.hpp"
#include "csv_util.hpp"
#include "advids/data.hpp"

namespace advids {
namespace {

constexpr std::array<std::string_view, 43> kNslKdd = {
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate", "label",
    "difficulty"};

constexpr std::array<std::string_view, 49> kUnsw = {
    "srcip", "sport", "dstip", "dsport", "proto", "state", "dur", "sbytes", "dbytes", "sttl",
    "dttl", "sloss", "dloss", "service", "sload", "dload", "spkts", "dpkts", "swin", "dwin",
    "stcpb", "dtcpb", "smeansz", "dmeansz", "trans_depth", "res_bdy_len", "sjit", "djit",
    "stime", "ltime", "sintpkt", "dintpkt", "tcprtt", "synack", "ackdat", "is_sm_ips_ports",
    "ct_state_ttl", "ct_flw_http_mthd", "is_ftp_login", "ct_ftp_cmd", "ct_srv_src",
    "ct_srv_dst", "ct_dst_ltm", "ct_src_ltm", "ct_src_dport_ltm", "ct_dst_sport_ltm",
    "ct_dst_src_ltm", "attack_cat", "label"};

enum class Kind { numeric, categorical, automatic, dropped };

struct SchemaRules {
  std::string label = "label";
  std::set<std::string, std::less<>> categorical;
  std::set<std::string, std::less<>> dropped;
  std::span<const std::string_view> headerless;  // empty: header required
};

SchemaRules rules_for(SchemaKind schema) {
  SchemaRules rules;
  switch (schema) {
    case SchemaKind::nslkdd:
      rules.categorical = {"protocol_type", "service", "flag"};
      rules.dropped = {"difficulty"};
      rules.headerless = kNslKdd;
      break;
    case SchemaKind::unsw:
      rules.categorical = {"proto", "state", "service"};
      rules.dropped = {"id", "srcip", "sport", "dstip", "dsport", "stime", "ltime", "attack_cat"};
      rules.headerless = kUnsw;
      break;
    case SchemaKind::generic:
      break;
  }
  return rules;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

int parse_label(std::string_view cell, std::size_t line) {
  const std::string v = lower(cell);
  if (v.empty()) fail(ErrorKind::parse, "line " + std::to_string(line) + ": empty label");
  if (v == "0" || v == "normal" || v == "benign") return 0;
  if (auto num = detail::parse_double(v)) return *num == 0.0 ? 0 : 1;
  return 1;  // any attack category
}

}  // namespace

namespace detail {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.front()))) cell.remove_prefix(1);
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.remove_suffix(1);
    if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"') {
      cell = cell.substr(1, cell.size() - 2);
    }
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_double(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

std::string format_double(double value) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

}  // namespace detail

std::optional<std::size_t> RawDataset::find_column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return i;
  }
  return std::nullopt;
}

RawDataset RawDataset::subset(std::span<const std::size_t> rows) const {
  RawDataset out;
  out.label_name = label_name;
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  for (const Column& col : columns) {
    Column c{col.name, col.kind, {}, {}};
    if (col.kind == ColumnKind::numeric) {
      c.numeric.reserve(rows.size());
      for (std::size_t r : rows) c.numeric.push_back(col.numeric.at(r));
    } else {
      c.categorical.reserve(rows.size());
      for (std::size_t r : rows) c.categorical.push_back(col.categorical.at(r));
    }
    out.columns.push_back(std::move(c));
  }
  return out;
}

SchemaKind schema_from_string(std::string_view name) {
  if (name == "unsw") return SchemaKind::unsw;
  if (name == "nslkdd") return SchemaKind::nslkdd;
  if (name == "generic") return SchemaKind::generic;
  fail(ErrorKind::parameter, "unknown schema '" + std::string(name) + "'");
}

std::string to_string(SchemaKind schema) {
  switch (schema) {
    case SchemaKind::unsw: return "unsw";
    case SchemaKind::nslkdd: return "nslkdd";
    case SchemaKind::generic: return "generic";
  }
  return "?";
}

std::span<const std::string_view> nslkdd_columns() { return kNslKdd; }
std::span<const std::string_view> unsw_columns() { return kUnsw; }

RawDataset read_csv(std::istream& in, SchemaKind schema, std::string_view source) {
  const SchemaRules rules = rules_for(schema);
  const std::string where(source);
  std::string line;
  std::size_t line_no = 0;

  std::vector<std::string> names;
  bool have_first_data = false;
  std::vector<std::string_view> first_cells;
  std::string first_line;

  // Skip blank lines up to the first row, then decide whether it is a header.
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    first_line = line;
    first_cells = detail::split_csv_line(first_line);
    bool header = false;
    for (auto cell : first_cells) {
      if (lower(cell) == rules.label) header = true;
    }
    if (schema == SchemaKind::nslkdd && !first_cells.empty() && lower(first_cells[0]) == "duration") {
      header = true;
    }
    if (header) {
      for (auto cell : first_cells) names.push_back(lower(cell));
    } else if (rules.headerless.empty()) {
      fail(ErrorKind::parse, where + ": line " + std::to_string(line_no) +
                                 ": generic CSV needs a header row with a '" + rules.label +
                                 "' column");
    } else {
      for (auto name : rules.headerless) names.emplace_back(name);
      have_first_data = true;
    }
    break;
  }
  if (names.empty()) fail(ErrorKind::parse, where + ": no rows");

  std::optional<std::size_t> label_at;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == rules.label) label_at = i;
  }
  if (!label_at) {
    if (schema != SchemaKind::generic) {
      fail(ErrorKind::parse, where + ": label column '" + rules.label + "' not found");
    }
    label_at = names.size() - 1;
  }

  std::vector<Kind> kinds(names.size(), Kind::numeric);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i == *label_at || rules.dropped.contains(names[i])) {
      kinds[i] = Kind::dropped;
    } else if (rules.categorical.contains(names[i])) {
      kinds[i] = Kind::categorical;
    } else if (schema == SchemaKind::generic) {
      kinds[i] = Kind::automatic;
    }
  }

  RawDataset data;
  data.label_name = names[*label_at];
  std::vector<std::size_t> slot(names.size(), 0);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (kinds[i] == Kind::dropped) continue;
    slot[i] = data.columns.size();
    data.columns.push_back(Column{names[i], kinds[i] == Kind::numeric ? ColumnKind::numeric
                                                                       : ColumnKind::categorical,
                                  {}, {}});
  }

  auto consume = [&](const std::vector<std::string_view>& cells, std::size_t at) {
    if (cells.size() != names.size()) {
      fail(ErrorKind::parse, where + ": line " + std::to_string(at) + ": expected " +
                                 std::to_string(names.size()) + " fields, found " +
                                 std::to_string(cells.size()));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (kinds[i] == Kind::dropped) continue;
      Column& col = data.columns[slot[i]];
      if (kinds[i] == Kind::numeric) {
        const auto value = detail::parse_double(cells[i]);
        if (!value) {
          fail(ErrorKind::parse, where + ": line " + std::to_string(at) + ": column '" +
                                     names[i] + "' is not numeric: '" + std::string(cells[i]) +
                                     "'");
        }
        col.numeric.push_back(*value);
      } else {
        col.categorical.emplace_back(cells[i]);
      }
    }
    data.labels.push_back(parse_label(cells[*label_at], at));
  };

  if (have_first_data) consume(first_cells, line_no);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    consume(detail::split_csv_line(line), line_no);
  }

  // Generic columns become numeric when every value parses.
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (kinds[i] != Kind::automatic) continue;
    Column& col = data.columns[slot[i]];
    std::vector<double> values;
    values.reserve(col.categorical.size());
    bool numeric = true;
    for (const auto& cell : col.categorical) {
      const auto v = detail::parse_double(cell);
      if (!v) {
        numeric = false;
        break;
      }
      values.push_back(*v);
    }
    if (numeric) {
      col.kind = ColumnKind::numeric;
      col.numeric = std::move(values);
      col.categorical.clear();
    }
  }
  return data;
}

RawDataset load_csv(const std::filesystem::path& path, SchemaKind schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return read_csv(in, schema, path.string());
}

void write_raw_csv(std::ostream& out, const RawDataset& data) {
  for (const Column& col : data.columns) out << col.name << ',';
  out << data.label_name << '\n';
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (const Column& col : data.columns) {
      if (col.kind == ColumnKind::numeric) {
        out << detail::format_double(col.numeric[r]);
      } else {
        out << col.categorical[r];
      }
      out << ',';
    }
    out << data.labels[r] << '\n';
  }
}

}  // namespace advids
