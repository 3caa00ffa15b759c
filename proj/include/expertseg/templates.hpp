#pragma once

#include <array>
#include <string>
#include <string_view>

namespace expertseg {

/// The 80 CLIP ImageNet prompt templates, in canonical order. "{}" marks the class name.
const std::array<std::string_view, 80>& imagenet_templates();

/// Substitutes the first "{}" in tmpl with class_name.
std::string format_prompt(std::string_view tmpl, std::string_view class_name);

}  // namespace expertseg
