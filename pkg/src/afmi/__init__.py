"""Feature-map-importance attribution engine for small CNNs.

Provides a self-contained float32 inference stack (conv/pool/relu/linear/gap),
an AFW1 weight-container loader, reference-based secant-estimator attribution
with Gradient / integrated-gradients / Grad-CAM baselines, the insertion
evaluation protocol, and an importance-prototype faithfulness classifier.
"""

from .attribution import (
    EstimatorConfig,
    FmiVector,
    SaliencyMap,
    afmi_saliency,
    compute_saliency,
    fmi,
    gradcam,
    gradcam_weights,
    gradient_saliency,
    ig_attributions,
    input_gradient,
    integrated_gradients,
    modified_grad_fc_head,
    taylor_estimator,
)
from .data import Dataset, IdxFormatError, load_mnist_idx
from .faithfulness import (
    FmiPrototypeClassifier,
    PrototypeBank,
    build_prototypes,
    classify_by_fmi,
    faithfulness_accuracy,
    faithfulness_report,
)
from .insertion import (
    MetricCurve,
    accuracy_at_pi,
    auc,
    evaluate,
    mask_insert,
    rank_pixels,
    softmax_ratio_at_pi,
)
from .model import (
    ActivationTrace,
    LayerSpec,
    Model,
    ModelError,
    Normalization,
    forward_with_trace,
    load_model,
    load_model_file,
    make_reference,
    predict,
    save_model,
)
from .tensor import ConvParams, ShapeError

__version__ = "0.1.0"
