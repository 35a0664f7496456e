#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dasc/error.hpp"

namespace dasc {

// Per-attribute control value: use it, avoid it, or not applicable.
enum class AttrValue : std::uint8_t { One, Zero, Phi };

const char* attr_value_str(AttrValue v);
AttrValue attr_value_from_str(const std::string& s);

struct Aspect {
    std::string name;
    std::vector<std::string> attributes;
};

// Ordered aspects, each grouping related attributes. Attribute indices are
// global (flattened across aspects, in declaration order).
class AttributeSchema {
public:
    static AttributeSchema with_aspects(std::vector<Aspect> aspects);

    const std::vector<Aspect>& aspects() const { return aspects_; }
    std::size_t num_aspects() const { return aspects_.size(); }
    std::size_t num_attributes() const { return names_.size(); }  // K

    const std::string& attribute_name(std::size_t k) const;
    // Throws DataError listing the valid names when unknown.
    std::size_t attribute_index(const std::string& name) const;
    bool has_attribute(const std::string& name) const;

    std::size_t aspect_of(std::size_t k) const;
    // [first, last) global attribute indices of an aspect.
    std::pair<std::size_t, std::size_t> aspect_range(std::size_t aspect) const;
    std::size_t aspect_index(const std::string& name) const;

    // Stable FNV-1a over aspect/attribute names; stored in checkpoints to
    // refuse head/schema mismatches.
    std::uint64_t hash() const;

private:
    std::vector<Aspect> aspects_;
    std::vector<std::string> names_;          // flattened attribute names
    std::vector<std::size_t> aspect_of_;      // per attribute
    std::vector<std::size_t> aspect_first_;   // per aspect
};

// One value per attribute, aligned with the schema's global order.
class AttributeAssignment {
public:
    AttributeAssignment() = default;
    explicit AttributeAssignment(std::size_t k) : values_(k, AttrValue::Phi) {}
    static AttributeAssignment all_phi(const AttributeSchema& schema) {
        return AttributeAssignment(schema.num_attributes());
    }

    std::size_t size() const { return values_.size(); }
    AttrValue value(std::size_t k) const { return values_.at(k); }
    void set(std::size_t k, AttrValue v) { values_.at(k) = v; }
    bool active(std::size_t k) const { return values_.at(k) != AttrValue::Phi; }
    std::size_t num_active() const;

    bool operator==(const AttributeAssignment&) const = default;

private:
    std::vector<AttrValue> values_;
};

// The stock 3-aspect configuration: style {alpha, beta, neutral},
// emotion {none, like, sadness, disgust, anger, happiness, fear, surprise},
// question {question, non_question}. K = 13.
AttributeSchema build_default_schema();

} // namespace dasc
