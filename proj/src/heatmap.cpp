#include "ctxc/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "ctxc/errors.hpp"

namespace ctxc {

namespace {

std::string escape_html(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\n': out += "<br>"; break;
      default: out += c;
    }
  }
  return out;
}

size_t cp_len(unsigned char b) {
  if ((b & 0xE0) == 0xC0) return 2;
  if ((b & 0xF0) == 0xE0) return 3;
  if ((b & 0xF8) == 0xF0) return 4;
  return 1;
}

}  // namespace

std::string render_heatmap_html(const std::string& document,
                                const std::vector<double>& token_scores,
                                const std::string& instruction) {
  if (token_scores.size() != document.size())
    throw std::invalid_argument("emit_heatmap: scores length must equal token length");
  for (double s : token_scores)
    if (!(s >= 0.0) || !std::isfinite(s))
      throw std::invalid_argument("emit_heatmap: scores must be finite and >= 0");

  const double max_score =
      token_scores.empty() ? 0.0
                           : *std::max_element(token_scores.begin(), token_scores.end());

  std::string body;
  size_t i = 0;
  while (i < document.size()) {
    const size_t len = std::min(cp_len(static_cast<unsigned char>(document[i])),
                                document.size() - i);
    double acc = 0.0;
    for (size_t k = 0; k < len; ++k) acc += token_scores[i + k];
    const double score = acc / static_cast<double>(len);
    const double intensity = max_score > 0.0 ? 100.0 * score / max_score : 0.0;
    char span[160];
    std::snprintf(span, sizeof(span),
                  "<span class=\"tok\" title=\"%.2f\" style=\"background:rgba(240,90,20,%.4f)\">",
                  intensity, intensity / 100.0);
    body += span;
    body += escape_html(document.substr(i, len));
    body += "</span>";
    i += len;
  }

  std::string html;
  html += "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n";
  html += "<title>token relevance</title>\n";
  html += "<style>body{font-family:sans-serif;max-width:60em;margin:2em auto;"
          "line-height:1.8}.tok{border-radius:2px}.caption{color:#444;"
          "margin-bottom:1em;font-style:italic}</style>\n</head>\n<body>\n";
  html += "<div class=\"caption\">Instruction: " + escape_html(instruction) + "</div>\n";
  html += "<div class=\"doc\">" + body + "</div>\n";
  html += "</body>\n</html>\n";
  return html;
}

void emit_heatmap(const std::string& document, const std::vector<double>& token_scores,
                  const std::string& instruction, const std::string& out_path) {
  const std::string html = render_heatmap_html(document, token_scores, instruction);
  std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + out_path);
  f << html;
  if (!f) throw DataError("failed writing: " + out_path);
}

}  // namespace ctxc
