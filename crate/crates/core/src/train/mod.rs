//! Training loop, schedule, and the evaluation/reporting harness.

mod data;
mod eval;
mod fit;
mod schedule;

pub use data::{epoch_order, make_chunks, prepare_records, PreparedRecord, TrainChunk};
pub use eval::{
    cross_condition_eval, evaluate, evaluate_examples, oracle_extract, AvTasNetExtractor, CrossConditionTable,
    EvalReport, Extractor, FavsExtractor, IdentityExtractor, OracleExtractor, OracleMask, RecordError, UtteranceScore,
    ORACLE_HOP, ORACLE_WINDOW,
};
pub use fit::{history_csv, train, validation_loss, EpochRecord, TrainConfig, TrainOutcome, Trainable};
pub use schedule::{PlateauSchedule, ScheduleEvent};
