#pragma once

#include "swin3d/attention.hpp"
#include "swin3d/checkpoint.hpp"
#include "swin3d/config.hpp"
#include "swin3d/data.hpp"
#include "swin3d/diagnostics.hpp"
#include "swin3d/errors.hpp"
#include "swin3d/gradcheck.hpp"
#include "swin3d/model.hpp"
#include "swin3d/ops.hpp"
#include "swin3d/parameter.hpp"
#include "swin3d/tensor.hpp"
#include "swin3d/train.hpp"
#include "swin3d/windowing.hpp"
