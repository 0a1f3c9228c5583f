//! Forward-executable networks: the candidate student ViT and the
//! convolutional teacher whose features the proxy compares against.

mod student;
mod teacher;

pub use student::{build_student, student_tokens, StudentModel, INIT_STD, LN_EPS};
pub use teacher::{
    load_teacher, random_teacher, teacher_features, ConvSpec, StageKind, StageSpec, TeacherConfig,
    TeacherModel, MANIFEST_FILE,
};
