"""Residual encoder-decoder generator (Johnson-style) with a tanh head."""

from dataclasses import asdict, dataclass

import torch
from torch import nn

LEAK = 0.2


@dataclass
class GeneratorConfig:
    base_channels: int = 64
    downsample_stages: int = 2
    residual_blocks: int = 9
    dropout_rate: float = 0.5

    def validate(self):
        errors = []
        if self.base_channels < 1:
            errors.append("base_channels must be >= 1")
        if self.downsample_stages < 0:
            errors.append("downsample_stages must be >= 0")
        if self.residual_blocks < 1:
            errors.append("residual_blocks must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            errors.append("dropout_rate must be in [0, 1)")
        return errors

    @property
    def stride(self):
        return 2 ** self.downsample_stages

    def to_dict(self):
        return asdict(self)


def norm(channels):
    # batch statistics in train and eval alike; with batch size 1 this is instance-style
    return nn.BatchNorm2d(channels, track_running_stats=False)


def conv_unit(cin, cout, kernel, stride=1, padding=0):
    return [
        nn.Conv2d(cin, cout, kernel, stride, padding, bias=False),
        norm(cout),
        nn.LeakyReLU(LEAK),
    ]


class ResidualBlock(nn.Module):
    """Two 3x3 conv units with dropout in between and an identity skip."""

    def __init__(self, channels, dropout_rate=0.5):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            *conv_unit(channels, channels, 3),
            nn.Dropout(dropout_rate),
            nn.ReflectionPad2d(1),
            *conv_unit(channels, channels, 3),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        config = config or GeneratorConfig()
        errors = config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.config = config
        ch = config.base_channels

        layers = [nn.ReflectionPad2d(3), *conv_unit(3, ch, 7)]
        for _ in range(config.downsample_stages):
            layers += conv_unit(ch, ch * 2, 3, stride=2, padding=1)
            ch *= 2
        self.encoder = nn.Sequential(*layers)
        self.blocks = nn.Sequential(*[ResidualBlock(ch, config.dropout_rate) for _ in range(config.residual_blocks)])

        layers = []
        for _ in range(config.downsample_stages):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 3, stride=2, padding=1, output_padding=1, bias=False),
                norm(ch // 2),
                nn.LeakyReLU(LEAK),
            ]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, 3, 7), nn.Tanh()]
        self.decoder = nn.Sequential(*layers)

    def bottleneck(self, x):
        return self.encoder(x)

    def forward(self, x):
        check_input(x, self.config.stride)
        return self.decoder(self.blocks(self.encoder(x)))


def check_input(x, stride):
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected an (N, 3, H, W) batch, got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % stride or w % stride:
        raise ValueError(
            f"input size {h}x{w} is not divisible by the network stride {stride}; "
            f"resize or crop to a multiple of {stride}"
        )


def build_generator(config=None, init_seed=0):
    """Construct a generator whose parameters depend only on ``init_seed``."""
    config = config or GeneratorConfig()
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed)
        net = Generator(config)
        init_weights(net)
    return net


def init_weights(net):
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)


def generator_forward(net, source, training=False):
    """Run ``net`` on an (N, 3, H, W) batch; dropout is active only when ``training``."""
    net.train(training)
    if training:
        return net(source)
    with torch.no_grad():
        return net(source)
