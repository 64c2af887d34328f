#pragma once

#include <string>
#include <vector>

namespace ctxc {

// Renders a self-contained HTML token-relevance view: each document token's
// background opacity is its score normalized so the maximum maps to
// intensity 100; the instruction is shown as a caption. token_scores has one
// entry per document token (byte); bytes of a multi-byte code point are
// rendered as one glyph with their mean score.
void emit_heatmap(const std::string& document, const std::vector<double>& token_scores,
                  const std::string& instruction, const std::string& out_path);

std::string render_heatmap_html(const std::string& document,
                                const std::vector<double>& token_scores,
                                const std::string& instruction);

}  // namespace ctxc
