/* Copyright 2026 The cfss Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>

namespace cfss {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad shapes, out-of-range sizes, inconsistent inputs.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// The support mask has no foreground cell once resized to the feature grid.
// Usually means the crack is too thin for the feature resolution.
class EmptyForeground : public Error {
 public:
  using Error::Error;
};

class EmptyBackground : public Error {
 public:
  using Error::Error;
};

// Dataset, image or checkpoint could not be read.
class LoadError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace cfss
