#include "xctlab/error.hpp"

namespace xct {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MissingKey: return "MissingKey";
    case ErrorCode::BadValue: return "BadValue";
    case ErrorCode::UnknownDtype: return "UnknownDtype";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::BorderVoxel: return "BorderVoxel";
    case ErrorCode::DegenerateTrace: return "DegenerateTrace";
    case ErrorCode::HeaderMismatch: return "HeaderMismatch";
    case ErrorCode::RowArity: return "RowArity";
    case ErrorCode::NumericParse: return "NumericParse";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::DegenerateFiber: return "DegenerateFiber";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::BadRange: return "BadRange";
    case ErrorCode::TooFewValues: return "TooFewValues";
    case ErrorCode::NonNumeric: return "NonNumeric";
    case ErrorCode::DegenerateCorners: return "DegenerateCorners";
    case ErrorCode::UnknownMarker: return "UnknownMarker";
    case ErrorCode::BadDictionary: return "BadDictionary";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::NoActiveDataset: return "NoActiveDataset";
    case ErrorCode::BadTF: return "BadTF";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::UnknownView: return "UnknownView";
    case ErrorCode::UnknownDataset: return "UnknownDataset";
  }
  return "Unknown";
}

}  // namespace xct
