from dataclasses import dataclass, field

from src.common.errors import InvalidParameterError

from .config_base import ConfigBase

POOLING_MODES = ("vlad", "avg", "max")
FUSION_MODES = ("none", "concat", "early", "late")
SYNTH_LAYOUTS = ("styled", "multiset", "disjoint")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidParameterError(message)


@dataclass
class InnerConfig(ConfigBase):
    """内部配置，一般不用改。"""

    version: str = "0.1.0"
    """配置文件结构版本，模板变了就递增。"""


@dataclass
class TrainConfig(ConfigBase):
    """两阶段训练的全部超参数。学习率、Adam epsilon、码本大小等默认值按常见的视频分类设置取。"""

    alpha: float = 1000.0
    """软分配锐度 α，越大越接近硬分配。"""

    k: int = 64
    """码本大小 K（action word 个数）。"""

    dropout: float = 0.5
    """作用在 VLAD 表示上的 dropout 比例。"""

    clip_norm: float = 5.0
    """梯度全局 L2 范数的裁剪阈值。"""

    stage1_lr: float = 0.01
    """第一阶段（固定码本，只训分类器）的学习率。"""

    stage2_lr: float = 1e-4
    """第二阶段（分类器和锚点联合微调）的学习率。"""

    adam_epsilon: float = 1e-4
    """Adam 分母里的 ε。"""

    adam_beta1: float = 0.9
    adam_beta2: float = 0.999

    accumulation_steps: int = 1
    """几个 micro-batch 的梯度平均后才更新一次参数。"""

    batch_size: int = 16
    """每个 micro-batch 的视频数。"""

    stage1_epochs: int = 60
    stage2_epochs: int = 30

    seed: int = 0
    """初始化、数据打乱和 dropout 的随机种子。"""

    freeze_boundary: bool = True
    """上游特征层是否冻结。特征是预先提取好的，这里只作记录。"""

    tie_anchors: bool = False
    """为 true 时残差锚点和分配锚点共用同一份参数和梯度。"""

    keep_best: bool = True
    """保留验证集准确率最高的那个 epoch 的模型。"""

    pooling: str = "vlad"
    """视频级池化方式：vlad / avg / max。"""

    def validate(self) -> None:
        _require(self.alpha > 0, f"alpha 必须大于 0，收到 {self.alpha}")
        _require(self.k >= 1, f"k 必须 >= 1，收到 {self.k}")
        _require(0.0 <= self.dropout < 1.0, f"dropout 必须在 [0, 1) 内，收到 {self.dropout}")
        _require(self.clip_norm > 0, f"clip_norm 必须大于 0，收到 {self.clip_norm}")
        _require(self.stage1_lr >= 0 and self.stage2_lr >= 0, "学习率不能为负")
        _require(self.adam_epsilon > 0, f"adam_epsilon 必须大于 0，收到 {self.adam_epsilon}")
        _require(0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0, "Adam β 必须在 [0, 1) 内")
        _require(self.accumulation_steps >= 1, "accumulation_steps 必须 >= 1")
        _require(self.batch_size >= 1, "batch_size 必须 >= 1")
        _require(self.stage1_epochs >= 0 and self.stage2_epochs >= 0, "epoch 数不能为负")
        _require(self.pooling in POOLING_MODES, f"pooling 必须是 {POOLING_MODES} 之一，收到 '{self.pooling}'")


@dataclass
class CodebookSettings(ConfigBase):
    """k-means 码本初始化的设置。"""

    k: int = 64
    alpha: float = 1000.0

    kmeans_max_iters: int = 100
    """Lloyd 迭代上限，分配不再变化时提前结束。"""

    max_samples: int = 100_000
    """从训练集均匀抽样的描述子数量上限。"""

    def validate(self) -> None:
        _require(self.k >= 1, f"k 必须 >= 1，收到 {self.k}")
        _require(self.alpha > 0, f"alpha 必须大于 0，收到 {self.alpha}")
        _require(self.kmeans_max_iters >= 1, "kmeans_max_iters 必须 >= 1")
        _require(self.max_samples >= 1, "max_samples 必须 >= 1")


@dataclass
class SynthConfig(ConfigBase):
    """合成子动作数据集的生成参数，默认规模在单核 CPU 上几分钟内能跑完。"""

    num_classes: int = 10
    num_sub_actions: int = 16
    """共享的子动作原型个数 S。"""

    sub_actions_per_class: int = 3
    """只有 disjoint 布局用到。"""

    frames: int = 24
    """是类别多重集大小的整数倍时（styled 是 4，multiset 是 2、4 或 6），各子动作的帧数严格按多重集比例分配。"""

    locations: int = 9
    dim: int = 32

    noise_sigma: float = 0.3
    """每个描述子上的高斯噪声标准差。"""

    train_per_class: int = 40
    val_per_class: int = 10
    test_per_class: int = 10
    seed: int = 0

    layout: str = "styled"
    """styled：多重集不同但有交集、均值和逐维最大值相同，另加类别外观偏移；multiset：平行四边形构造的同类多重集，没有外观偏移；disjoint：互不共享。"""

    prototype_scale: float = 1.5
    """原型向量各分量的标准差。"""

    style_magnitude: float = 0.15
    """styled 布局里类别外观偏移的逐维幅度。"""

    style_margin: float = 1.2
    """只在比类别内最大原型低出这么多的维度上放外观偏移，这样逐维最大值不受影响。"""

    streams: int = 1
    """1 或 2；第二路与第一路逐帧对应（同一子动作），原型独立。"""

    crops: int = 1
    """每个视频每路的裁剪数，多出来的裁剪只换噪声。"""

    def validate(self) -> None:
        _require(self.num_classes >= 2, f"至少需要 2 个类别，收到 {self.num_classes}")
        _require(self.num_sub_actions >= 2, f"至少需要 2 个子动作，收到 {self.num_sub_actions}")
        _require(self.sub_actions_per_class >= 1, "sub_actions_per_class 必须 >= 1")
        _require(min(self.frames, self.locations, self.dim) >= 1, "frames / locations / dim 必须 >= 1")
        _require(self.noise_sigma >= 0, "noise_sigma 不能为负")
        _require(min(self.train_per_class, self.val_per_class, self.test_per_class) >= 0, "每类视频数不能为负")
        _require(self.train_per_class >= 1, "train_per_class 必须 >= 1")
        _require(self.layout in SYNTH_LAYOUTS, f"layout 必须是 {SYNTH_LAYOUTS} 之一，收到 '{self.layout}'")
        _require(self.prototype_scale > 0, "prototype_scale 必须大于 0")
        _require(self.style_magnitude >= 0 and self.style_margin >= 0, "外观偏移参数不能为负")
        _require(self.streams in (1, 2), f"streams 只能是 1 或 2，收到 {self.streams}")
        _require(self.crops >= 1, "crops 必须 >= 1")
        if self.layout == "styled":
            _require(self.num_sub_actions >= 8, "styled 布局至少需要 8 个子动作（一个立方体）")
            _require(self.dim >= 3, "styled 布局至少需要 3 维")
        elif self.layout == "multiset":
            _require(self.num_sub_actions >= 4, "multiset 布局至少需要 4 个子动作（一个平行四边形）")
            _require(self.dim >= 2, "multiset 布局至少需要 2 维")
        else:
            _require(
                self.num_sub_actions >= self.num_classes * self.sub_actions_per_class,
                "disjoint 布局要求 num_sub_actions >= num_classes * sub_actions_per_class",
            )


@dataclass
class EvaluationSettings(ConfigBase):
    """评估与融合的默认值。"""

    fusion_weight: float = 0.5
    """后融合 / 外部分数融合时第一路（或模型）分数的权重。"""

    late_fusion_space: str = "probability"
    """后融合在 probability（softmax 之后）还是 logit 上做加权平均。"""

    report_format: str = "text"

    def validate(self) -> None:
        _require(0.0 <= self.fusion_weight <= 1.0, f"fusion_weight 必须在 [0, 1] 内，收到 {self.fusion_weight}")
        _require(self.late_fusion_space in ("probability", "logit"), "late_fusion_space 只能是 probability 或 logit")
        _require(self.report_format in ("text", "yaml"), "report_format 只能是 text 或 yaml")


@dataclass
class RuntimeSettings(ConfigBase):
    """运行时设置。"""

    workers: int = 1
    """编码视频时的线程数。"""

    deterministic: bool = False
    """为 true 时强制单线程。"""

    def validate(self) -> None:
        _require(self.workers >= 1, f"workers 必须 >= 1，收到 {self.workers}")


@dataclass
class ActionVladRootConfig(ConfigBase):
    """根配置，对应 config.toml 的全部表。"""

    inner: InnerConfig = field(default_factory=InnerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    codebook: CodebookSettings = field(default_factory=CodebookSettings)
    synth: SynthConfig = field(default_factory=SynthConfig)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    runtime: RuntimeSettings = field(default_factory=RuntimeSettings)
