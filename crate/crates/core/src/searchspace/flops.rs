//! Multiply-accumulate counting. Only convolutions and fully connected
//! layers cost anything; batch norm, activations, pooling and the channel
//! shuffle are free.

use alloc::format;
use alloc::vec::Vec;

use super::{Architecture, ChoiceKind, SearchSpace, NUM_CHOICES, STEM_STRIDE};
use crate::error::{Error, Result};

/// Fully connected head attached after global average pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub outputs: usize,
}

/// MACs of one convolution: `(c_in / groups) * c_out * k * k * h_out * w_out`.
pub fn conv_macs(
    in_channels: usize,
    out_channels: usize,
    groups: usize,
    kernel: usize,
    out_hw: (usize, usize),
) -> u64 {
    ((in_channels / groups) * out_channels * kernel * kernel) as u64
        * (out_hw.0 * out_hw.1) as u64
}

/// Output extent of a same-padded convolution with odd kernel.
pub(crate) fn strided(extent: usize, stride: usize) -> usize {
    extent.div_ceil(stride)
}

/// MACs of one choice block.
pub fn block_flops(
    choice: ChoiceKind,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    in_hw: (usize, usize),
) -> Result<u64> {
    let out_hw = (strided(in_hw.0, stride), strided(in_hw.1, stride));
    let k = choice.kernel_size();
    match stride {
        1 => {
            if in_channels != out_channels || !in_channels.is_multiple_of(2) {
                return Err(Error::InvalidConfiguration(format!(
                    "stride-1 block needs equal even channels, got {in_channels} -> {out_channels}"
                )));
            }
            let half = in_channels / 2;
            let right = match choice {
                ChoiceKind::Xception3x3 => {
                    3 * (conv_macs(half, half, half, 3, out_hw) + conv_macs(half, half, 1, 1, out_hw))
                }
                _ => {
                    conv_macs(half, half, 1, 1, out_hw)
                        + conv_macs(half, half, half, k, out_hw)
                        + conv_macs(half, half, 1, 1, out_hw)
                }
            };
            Ok(right)
        }
        2 => {
            if !out_channels.is_multiple_of(2) {
                return Err(Error::InvalidConfiguration(format!(
                    "block output channels {out_channels} must be even"
                )));
            }
            let half = out_channels / 2;
            let left = conv_macs(in_channels, in_channels, in_channels, k, out_hw)
                + conv_macs(in_channels, half, 1, 1, out_hw);
            let right = match choice {
                ChoiceKind::Xception3x3 => {
                    conv_macs(in_channels, in_channels, in_channels, 3, out_hw)
                        + conv_macs(in_channels, half, 1, 1, out_hw)
                        + 2 * (conv_macs(half, half, half, 3, out_hw)
                            + conv_macs(half, half, 1, 1, out_hw))
                }
                _ => {
                    conv_macs(in_channels, half, 1, 1, in_hw)
                        + conv_macs(half, half, half, k, out_hw)
                        + conv_macs(half, half, 1, 1, out_hw)
                }
            };
            Ok(left + right)
        }
        s => Err(Error::InvalidConfiguration(format!("stride {s} not in {{1, 2}}"))),
    }
}

pub fn stem_flops(space: &SearchSpace, resolution: (usize, usize)) -> u64 {
    let out = (strided(resolution.0, STEM_STRIDE), strided(resolution.1, STEM_STRIDE));
    conv_macs(3, space.stem_channels, 1, 3, out)
}

/// MACs of `arch` at the space's reporting resolution, without a head.
pub fn architecture_flops(arch: &Architecture, space: &SearchSpace) -> Result<u64> {
    architecture_flops_at(arch, space, space.input_resolution, None)
}

/// MACs of `arch` at an arbitrary input resolution, optionally counting a
/// fully connected head.
pub fn architecture_flops_at(
    arch: &Architecture,
    space: &SearchSpace,
    resolution: (usize, usize),
    head: Option<HeadSpec>,
) -> Result<u64> {
    arch.check_space(space)?;
    let mut total = stem_flops(space, resolution);
    let mut hw = (strided(resolution.0, STEM_STRIDE), strided(resolution.1, STEM_STRIDE));
    for (pos, &choice) in space.blocks().iter().zip(arch.choices()) {
        total += block_flops(choice, pos.in_channels, pos.out_channels, pos.stride, hw)?;
        hw = (strided(hw.0, pos.stride), strided(hw.1, pos.stride));
    }
    if let Some(h) = head {
        total += (space.final_channels() * h.outputs) as u64;
    }
    Ok(total)
}

/// The cheapest and the most expensive path of `space` at its reporting
/// resolution. Block costs are independent, so each block picks its own
/// extreme.
pub fn flops_extremes(space: &SearchSpace) -> Result<((Architecture, u64), (Architecture, u64))> {
    let res = space.input_resolution;
    let mut lo = (Vec::new(), stem_flops(space, res));
    let mut hi = (Vec::new(), lo.1);
    let mut hw = (strided(res.0, STEM_STRIDE), strided(res.1, STEM_STRIDE));
    for pos in space.blocks() {
        let mut costs = Vec::with_capacity(NUM_CHOICES);
        for c in ChoiceKind::ALL {
            costs.push((block_flops(c, pos.in_channels, pos.out_channels, pos.stride, hw)?, c));
        }
        let min = costs.iter().min_by_key(|x| x.0).expect("four choices");
        let max = costs.iter().max_by_key(|x| x.0).expect("four choices");
        lo.0.push(min.1);
        lo.1 += min.0;
        hi.0.push(max.1);
        hi.1 += max.0;
        hw = (strided(hw.0, pos.stride), strided(hw.1, pos.stride));
    }
    Ok(((Architecture::new(lo.0), lo.1), (Architecture::new(hi.0), hi.1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::searchspace::StageSpec;
    use alloc::vec;

    /// (c_in, c_out, groups, k, h_out, w_out) of every convolution, written out by hand.
    type Layer = (u64, u64, u64, u64, u64, u64);

    fn hand_sum(layers: &[Layer]) -> u64 {
        layers.iter().map(|&(ci, co, g, k, h, w)| ci / g * co * k * k * h * w).sum()
    }

    #[test]
    fn bare_convolutions() {
        assert_eq!(conv_macs(16, 32, 1, 1, (8, 8)), 32768);
        assert_eq!(conv_macs(8, 8, 8, 3, (4, 4)), 1152);
    }

    #[test]
    fn shuffle3x3_stride1_hand_count() {
        // C = 64, 16x16: right branch 1x1 (32->32), dw 3x3 (32), 1x1 (32->32).
        let layers = [(32, 32, 1, 1, 16, 16), (32, 32, 32, 3, 16, 16), (32, 32, 1, 1, 16, 16)];
        let expected = hand_sum(&layers);
        assert_eq!(expected, 598_016);
        assert_eq!(block_flops(ChoiceKind::Shuffle3x3, 64, 64, 1, (16, 16)).unwrap(), expected);
    }

    #[test]
    fn stride2_and_xception_hand_counts() {
        // 16 -> 32 channels, 8x8 in, 4x4 out, 5x5 kernel.
        let shuffle5 = [
            (16, 16, 16, 5, 4, 4),
            (16, 16, 1, 1, 4, 4),
            (16, 16, 1, 1, 8, 8),
            (16, 16, 16, 5, 4, 4),
            (16, 16, 1, 1, 4, 4),
        ];
        assert_eq!(
            block_flops(ChoiceKind::Shuffle5x5, 16, 32, 2, (8, 8)).unwrap(),
            hand_sum(&shuffle5)
        );
        let xcep = [
            (16, 16, 16, 3, 4, 4),
            (16, 16, 1, 1, 4, 4),
            (16, 16, 16, 3, 4, 4),
            (16, 16, 1, 1, 4, 4),
            (16, 16, 16, 3, 4, 4),
            (16, 16, 1, 1, 4, 4),
            (16, 16, 16, 3, 4, 4),
            (16, 16, 1, 1, 4, 4),
        ];
        assert_eq!(
            block_flops(ChoiceKind::Xception3x3, 16, 32, 2, (8, 8)).unwrap(),
            hand_sum(&xcep)
        );
    }

    #[test]
    fn odd_channels_in_stride1_block_error() {
        assert!(matches!(
            block_flops(ChoiceKind::Shuffle3x3, 7, 7, 1, (8, 8)),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn toy_space_total_matches_layer_sum() {
        // stem 8, one stage of 3 blocks at 16 channels, 32x32 input.
        let space = SearchSpace::new(8, vec![StageSpec::new(16, 3)], (32, 32)).unwrap();
        let arch = Architecture::uniform(&space, ChoiceKind::Shuffle3x3);
        let mut layers: Vec<Layer> = vec![(3, 8, 1, 3, 16, 16)];
        layers.extend([
            (8, 8, 8, 3, 8, 8),
            (8, 8, 1, 1, 8, 8),
            (8, 8, 1, 1, 16, 16),
            (8, 8, 8, 3, 8, 8),
            (8, 8, 1, 1, 8, 8),
        ]);
        for _ in 0..2 {
            layers.extend([(8, 8, 1, 1, 8, 8), (8, 8, 8, 3, 8, 8), (8, 8, 1, 1, 8, 8)]);
        }
        assert_eq!(architecture_flops(&arch, &space).unwrap(), hand_sum(&layers));
        let with_head =
            architecture_flops_at(&arch, &space, (32, 32), Some(HeadSpec { outputs: 4 })).unwrap();
        assert_eq!(with_head, hand_sum(&layers) + 16 * 4);
    }

    #[test]
    fn reported_budgets() {
        let small = SearchSpace::small();
        let f = architecture_flops(&Architecture::uniform(&small, ChoiceKind::Shuffle3x3), &small)
            .unwrap();
        assert!((240_000_000..=360_000_000).contains(&f), "small {f}");
        let large = SearchSpace::large();
        let f = architecture_flops(&Architecture::uniform(&large, ChoiceKind::Shuffle3x3), &large)
            .unwrap();
        assert!((1_000_000_000..=1_600_000_000).contains(&f), "large {f}");
    }

    #[test]
    fn halved_resolution_is_about_a_quarter() {
        for space in [SearchSpace::small(), SearchSpace::large()] {
            for choice in ChoiceKind::ALL {
                let arch = Architecture::uniform(&space, choice);
                let full = architecture_flops_at(&arch, &space, (224, 224), None).unwrap();
                let half = architecture_flops_at(&arch, &space, (112, 112), None).unwrap();
                let ratio = half as f64 / full as f64;
                // the last stage runs at 4x4 instead of 3.5x3.5 after rounding up
                assert!((0.25..0.30).contains(&ratio), "{choice}: {ratio}");
            }
        }
    }

    #[test]
    fn kernel_size_is_monotone_and_xception_is_heavier() {
        let space = SearchSpace::small();
        let base = Architecture::uniform(&space, ChoiceKind::Shuffle3x3);
        let base_flops = architecture_flops(&base, &space).unwrap();
        for i in 0..space.total_blocks() {
            let mut prev = base_flops;
            for c in [ChoiceKind::Shuffle5x5, ChoiceKind::Shuffle7x7] {
                let mut arch = base.clone();
                arch.choices_mut()[i] = c;
                let f = architecture_flops(&arch, &space).unwrap();
                assert!(f > prev);
                prev = f;
            }
        }
        let xcep = architecture_flops(&Architecture::uniform(&space, ChoiceKind::Xception3x3), &space)
            .unwrap();
        assert!(xcep >= base_flops);
    }

    #[test]
    fn length_mismatch_rejected() {
        let space = SearchSpace::small();
        let arch = Architecture::new(vec![ChoiceKind::Shuffle3x3; 3]);
        assert!(matches!(
            architecture_flops(&arch, &space),
            Err(Error::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn extremes_bound_every_path() {
        let space = SearchSpace::small();
        let ((cheap, lo), (dear, hi)) = flops_extremes(&space).unwrap();
        assert_eq!(architecture_flops(&cheap, &space).unwrap(), lo);
        assert_eq!(architecture_flops(&dear, &space).unwrap(), hi);
        let all3 = architecture_flops(&Architecture::uniform(&space, ChoiceKind::Shuffle3x3), &space).unwrap();
        assert!(lo <= all3 && all3 < hi);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        for _ in 0..200 {
            let f = architecture_flops(&crate::searchspace::random_architecture(&space, &mut rng), &space).unwrap();
            assert!((lo..=hi).contains(&f));
        }
    }
}
