// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header: pulls in the whole library.

#pragma once

#include "datapallet/ancestry.hpp"
#include "datapallet/annotation.hpp"
#include "datapallet/archive.hpp"
#include "datapallet/bench.hpp"
#include "datapallet/capture.hpp"
#include "datapallet/errors.hpp"
#include "datapallet/format.hpp"
#include "datapallet/fsutil.hpp"
#include "datapallet/hub.hpp"
#include "datapallet/pallet_id.hpp"
#include "datapallet/runner.hpp"
#include "datapallet/sha256.hpp"
