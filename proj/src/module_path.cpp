#include "mda/module_path.hpp"

#include <charconv>

namespace mda {

namespace {

constexpr std::pair<Stack, std::string_view> kStacks[] = {
    {Stack::Causal, "causal"},
    {Stack::Noncausal, "noncausal"},
    {Stack::DecoderCausal, "decoder_causal"},
    {Stack::DecoderNoncausal, "decoder_noncausal"},
};

constexpr std::pair<Site, std::string_view> kSites[] = {
    {Site::Whole, ""},          {Site::Block, "block"},
    {Site::FfnStart, "ffn_start"}, {Site::Mhsa, "mhsa"},
    {Site::Conv, "conv"},       {Site::FfnEnd, "ffn_end"},
    {Site::Prediction, "prediction"}, {Site::Joint, "joint"},
};

std::vector<std::string_view> split_dots(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = text.find('.', start);
    parts.push_back(text.substr(start, dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

}  // namespace

std::string_view stack_name(Stack s) {
  for (auto [k, v] : kStacks) if (k == s) return v;
  return "?";
}

std::string_view site_name(Site s) {
  for (auto [k, v] : kSites) if (k == s) return v;
  return "?";
}

bool is_encoder(Stack s) { return s == Stack::Causal || s == Stack::Noncausal; }

Stack decoder_for(Stack encoder) {
  switch (encoder) {
    case Stack::Causal: return Stack::DecoderCausal;
    case Stack::Noncausal: return Stack::DecoderNoncausal;
    case Stack::DecoderCausal: return Stack::Causal;
    case Stack::DecoderNoncausal: return Stack::Noncausal;
  }
  return Stack::Noncausal;
}

ModulePath ModulePath::parse(std::string_view text) {
  const auto parts = split_dots(text);
  ModulePath p;
  bool found = false;
  for (auto [k, v] : kStacks) {
    if (parts[0] == v) {
      p.stack = k;
      found = true;
    }
  }
  if (!found) throw InvalidPathError("unknown stack in path '" + std::string(text) + "'");
  if (parts.size() == 1) return p;

  if (is_encoder(p.stack)) {
    std::string_view b = parts[1];
    if (b.substr(0, 5) != "block" || b.size() == 5) {
      throw InvalidPathError("expected blockN in path '" + std::string(text) + "'");
    }
    int idx = -1;
    auto [ptr, ec] = std::from_chars(b.data() + 5, b.data() + b.size(), idx);
    if (ec != std::errc{} || ptr != b.data() + b.size() || idx < 0) {
      throw InvalidPathError("bad block index in path '" + std::string(text) + "'");
    }
    p.block = idx;
    p.site = Site::Block;
    if (parts.size() == 2) return p;
    if (parts.size() > 3) throw InvalidPathError("path too deep: '" + std::string(text) + "'");
    for (auto [k, v] : kSites) {
      if (parts[2] == v && ModulePath{p.stack, idx, k}.is_module_site()) {
        p.site = k;
        return p;
      }
    }
    throw InvalidPathError("unknown module site in path '" + std::string(text) + "'");
  }

  if (parts.size() > 2) throw InvalidPathError("path too deep: '" + std::string(text) + "'");
  if (parts[1] == "prediction") {
    p.site = Site::Prediction;
  } else if (parts[1] == "joint") {
    p.site = Site::Joint;
  } else {
    throw InvalidPathError("unknown decoder part in path '" + std::string(text) + "'");
  }
  return p;
}

std::string ModulePath::str() const {
  std::string out(stack_name(stack));
  if (is_encoder(stack)) {
    if (block >= 0) out += ".block" + std::to_string(block);
    if (site != Site::Whole && site != Site::Block) {
      out += '.';
      out += site_name(site);
    }
  } else if (site != Site::Whole) {
    out += '.';
    out += site_name(site);
  }
  return out;
}

bool ModulePath::contains(const ModulePath& other) const {
  if (stack != other.stack) return false;
  if (site == Site::Whole) return true;
  if (is_encoder(stack)) {
    if (block != other.block) return false;
    if (site == Site::Block) return true;
  }
  return site == other.site;
}

bool ModulePath::owns_key(std::string_view key) const {
  const std::string prefix = str() + ".";
  return key.substr(0, prefix.size()) == prefix;
}

bool block_has_mhsa(const EncoderConfig& cfg, Stack stack, int block) {
  return stack != Stack::Causal || block >= cfg.mhsa_skip_first_n;
}

int stack_blocks(const EncoderConfig& cfg, Stack stack) {
  switch (stack) {
    case Stack::Causal: return cfg.causal_blocks;
    case Stack::Noncausal: return cfg.noncausal_blocks;
    default: return 0;
  }
}

int stack_dim(const EncoderConfig& cfg, Stack stack) {
  return stack == Stack::Causal ? cfg.d_causal : cfg.d_noncausal;
}

void validate_path(const ModulePath& path, const ModelConfig& cfg) {
  if (!is_encoder(path.stack)) {
    if (path.site != Site::Whole && path.site != Site::Prediction &&
        path.site != Site::Joint) {
      throw InvalidPathError("invalid decoder path '" + path.str() + "'");
    }
    return;
  }
  if (path.site == Site::Whole) return;
  if (path.block < 0 || path.block >= stack_blocks(cfg.encoder, path.stack)) {
    throw InvalidPathError("block index out of range in '" + path.str() + "'");
  }
  if (path.site == Site::Prediction || path.site == Site::Joint) {
    throw InvalidPathError("decoder site on encoder stack: '" + path.str() + "'");
  }
  if (path.site == Site::Mhsa && !block_has_mhsa(cfg.encoder, path.stack, path.block)) {
    throw InvalidPathError("block has no MHSA module: '" + path.str() + "'");
  }
}

bool path_exists(const ModulePath& path, const ModelConfig& cfg) {
  try {
    validate_path(path, cfg);
    return true;
  } catch (const InvalidPathError&) {
    return false;
  }
}

std::vector<ModulePath> module_sites(const ModelConfig& cfg, Stack stack) {
  std::vector<ModulePath> out;
  for (int b = 0; b < stack_blocks(cfg.encoder, stack); ++b) {
    for (Site s : {Site::FfnStart, Site::Mhsa, Site::Conv, Site::FfnEnd}) {
      ModulePath p{stack, b, s};
      if (path_exists(p, cfg)) out.push_back(p);
    }
  }
  return out;
}

std::vector<ModulePath> all_paths(const ModelConfig& cfg) {
  std::vector<ModulePath> out;
  for (Stack s : {Stack::Causal, Stack::Noncausal}) {
    out.push_back({s, -1, Site::Whole});
    for (int b = 0; b < stack_blocks(cfg.encoder, s); ++b) {
      out.push_back({s, b, Site::Block});
    }
    for (const auto& p : module_sites(cfg, s)) out.push_back(p);
  }
  for (Stack s : {Stack::DecoderCausal, Stack::DecoderNoncausal}) {
    out.push_back({s, -1, Site::Whole});
    out.push_back({s, -1, Site::Prediction});
    out.push_back({s, -1, Site::Joint});
  }
  return out;
}

}  // namespace mda
