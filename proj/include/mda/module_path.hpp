#pragma once

#include "mda/config.hpp"

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mda {

enum class Stack { Causal, Noncausal, DecoderCausal, DecoderNoncausal };

enum class Site { Whole, Block, FfnStart, Mhsa, Conv, FfnEnd, Prediction, Joint };

std::string_view stack_name(Stack s);
std::string_view site_name(Site s);
bool is_encoder(Stack s);
// The decoder fed by an encoder stack, and vice versa.
Stack decoder_for(Stack encoder);

// Address of a model component: "noncausal.block3.ffn_end",
// "causal.block0", "noncausal", "decoder_causal.joint".
struct ModulePath {
  Stack stack = Stack::Noncausal;
  int block = -1;
  Site site = Site::Whole;

  static ModulePath parse(std::string_view text);
  static ModulePath module(Stack stack, int block, Site site) {
    return {stack, block, site};
  }
  std::string str() const;

  // True when `other` lies inside this component (or equals it).
  bool contains(const ModulePath& other) const;
  // True when a parameter key belongs to this component.
  bool owns_key(std::string_view key) const;
  bool is_module_site() const {
    return site == Site::FfnStart || site == Site::Mhsa || site == Site::Conv ||
           site == Site::FfnEnd;
  }

  auto operator<=>(const ModulePath&) const = default;
};

class InvalidPathError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

bool block_has_mhsa(const EncoderConfig& cfg, Stack stack, int block);
int stack_blocks(const EncoderConfig& cfg, Stack stack);
int stack_dim(const EncoderConfig& cfg, Stack stack);

// Throws InvalidPathError when the path does not name a component of `cfg`.
void validate_path(const ModulePath& path, const ModelConfig& cfg);
bool path_exists(const ModulePath& path, const ModelConfig& cfg);

// Every module site path of an encoder stack, in forward order.
std::vector<ModulePath> module_sites(const ModelConfig& cfg, Stack stack);
// Every addressable path (stacks, blocks, sites, decoder parts).
std::vector<ModulePath> all_paths(const ModelConfig& cfg);

}  // namespace mda
