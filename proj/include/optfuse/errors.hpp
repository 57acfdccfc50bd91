/*
Copyright 2026 The OptFuse Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <stdexcept>
#include <string>

namespace optfuse {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model / optimizer / bench configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong phase of an iteration (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// A scheduler broke the update contract, e.g. stepping a parameter whose
// gradient is still being accumulated.
class SchedulingError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when a schedule that updates parameters during backward is asked to
// run a policy that must see every gradient first (global-norm clipping,
// Newton).
class GlobalInfoRequired : public Error {
 public:
  using Error::Error;
};

}  // namespace optfuse
