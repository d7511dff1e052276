// Copyright 2026 The ScalarFedLQR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "sfl/config.hpp"
#include "sfl/errors.hpp"
#include "sfl/experiments.hpp"
#include "sfl/fed_protocol.hpp"
#include "sfl/fleet.hpp"
#include "sfl/lqr.hpp"
#include "sfl/matrix.hpp"
#include "sfl/parallel.hpp"
#include "sfl/projection_codec.hpp"
#include "sfl/rng.hpp"
#include "sfl/theory_checks.hpp"
#include "sfl/zo_gradient.hpp"
