//! Layer stacks used by the harness.

use super::{LayerKind, LayerSpec};

/// Fully connected stack: `input -> hidden... -> classes`.
pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = inputs;
    for &h in hidden {
        specs.push(LayerSpec::hidden(LayerKind::FullyConnected {
            inputs: prev,
            outputs: h,
        }));
        prev = h;
    }
    specs.push(LayerSpec::output(LayerKind::FullyConnected {
        inputs: prev,
        outputs: classes,
    }));
    specs
}

/// Two 3x3 convolutions (the second with stride 2) and two fully connected
/// layers. Sized for small grayscale digits.
pub fn small_cnn(
    input_shape: [usize; 3],
    channels: [usize; 2],
    hidden: usize,
    classes: usize,
) -> Vec<LayerSpec> {
    let [c, h, w] = input_shape;
    let conv1 = LayerKind::Conv2d {
        in_channels: c,
        out_channels: channels[0],
        kernel: 3,
        stride: 1,
        padding: 1,
        in_height: h,
        in_width: w,
    };
    let [c1, h1, w1] = conv1.output_shape();
    let conv2 = LayerKind::Conv2d {
        in_channels: c1,
        out_channels: channels[1],
        kernel: 3,
        stride: 2,
        padding: 1,
        in_height: h1,
        in_width: w1,
    };
    let flat = conv2.output_len();
    vec![
        LayerSpec::hidden(conv1),
        LayerSpec::hidden(conv2),
        LayerSpec::hidden(LayerKind::FullyConnected {
            inputs: flat,
            outputs: hidden,
        }),
        LayerSpec::output(LayerKind::FullyConnected {
            inputs: hidden,
            outputs: classes,
        }),
    ]
}

/// VGG9-style stack for 3x32x32 inputs: seven 3x3 convolutions, with
/// stride-2 convolutions in place of pooling, and two fully connected layers.
pub fn vgg9(classes: usize) -> Vec<LayerSpec> {
    let plan: [(usize, usize); 7] = [
        (64, 1),
        (64, 2),
        (128, 1),
        (128, 2),
        (256, 1),
        (256, 1),
        (256, 2),
    ];
    let mut specs = Vec::new();
    let (mut c, mut h, mut w) = (3, 32, 32);
    for (out, stride) in plan {
        let kind = LayerKind::Conv2d {
            in_channels: c,
            out_channels: out,
            kernel: 3,
            stride,
            padding: 1,
            in_height: h,
            in_width: w,
        };
        [c, h, w] = kind.output_shape();
        specs.push(LayerSpec::hidden(kind));
    }
    specs.push(LayerSpec::hidden(LayerKind::FullyConnected {
        inputs: c * h * w,
        outputs: 1024,
    }));
    specs.push(LayerSpec::output(LayerKind::FullyConnected {
        inputs: 1024,
        outputs: classes,
    }));
    specs
}
