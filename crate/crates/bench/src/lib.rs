//! Shared inputs for the benchmarks.

use stereo_core::synth::{default_camera, random_board_poses, random_dot_stereogram, DEFAULT_IMAGE_SIZE};
use stereo_core::target::{render_chessboard, RenderOptions};
use stereo_core::{BoardSpec, ImageU8};

/// Random-dot pair with a constant 12 px shift.
pub fn stereogram(width: usize, height: usize) -> (ImageU8, ImageU8) {
    random_dot_stereogram(width, height, 12, 1)
}

/// One rendered 9×6 chessboard view at 640×480.
pub fn chessboard_view() -> (ImageU8, BoardSpec) {
    let board = BoardSpec::default();
    let (k, d) = default_camera();
    let pose = random_board_poses(&k, &d, &board, DEFAULT_IMAGE_SIZE, 1, 3)[0];
    let img = render_chessboard(&board, &k, &d, &pose, DEFAULT_IMAGE_SIZE, RenderOptions::default())
        .expect("board in view");
    (img, board)
}
