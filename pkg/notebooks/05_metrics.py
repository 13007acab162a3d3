"""
Grounding and captioning metrics
================================

Acc@IoU and F1@IoU use a strict threshold: a box counts only when its IoU
exceeds it. F1 matches predictions to ground truth one-to-one so that the
number of matched pairs is as large as possible.
"""

# %%
from graphtok3d import AxisAlignedBox, CaptionPair, acc_at_iou, bleu4, exact_match, f1_at_iou

gt = AxisAlignedBox((0, 0, 0), (1, 1, 1))
for s in (0.0, 0.25, 0.5):
    b = AxisAlignedBox((s, 0, 0), (1 + s, 1, 1))
    print(f"shift {s}:", "hit" if acc_at_iou([(b, gt)], 0.5) else "miss")

# the lower half of the box has IoU exactly 0.5, which is not above 0.5
half = AxisAlignedBox((0, 0, 0), (1, 1, 0.5))
print("half box:", "hit" if acc_at_iou([(half, gt)], 0.5) else "miss")

# %%
# A greedy matcher would pair the first prediction with the first target
# and leave the second one unmatched; the optimal matching finds both.
preds = [AxisAlignedBox((0, 0, 0), (2, 1, 1)), AxisAlignedBox((1, 0, 0), (3, 1, 1))]
gts = [AxisAlignedBox((0, 0, 0), (1, 1, 1)), AxisAlignedBox((1, 0, 0), (2, 1, 1))]
print("F1@0.25 =", f1_at_iou(preds, gts, 0.25)[2])

# %%
pair = CaptionPair.from_strings("a brown chair next to the table",
                                ["the brown chair is next to the wooden table"])
# no 4-gram is shared, so plain BLEU-4 is 0 and only the smoothed score is positive
print("BLEU-4:", round(bleu4(pair), 4), "smoothed:", round(bleu4(pair, smooth=True), 4))
print("EM:", exact_match("  Two  Chairs.", ["two chairs"]))
