#pragma once

#include <hdf5.h>

#include <cstdint>
#include <string>
#include <vector>

#include "histcode/errors.hpp"

namespace histcode::h5 {

/// RAII wrapper for an hid_t with its matching close function.
class Handle {
 public:
  using Closer = herr_t (*)(hid_t);
  Handle() = default;
  Handle(hid_t id, Closer closer) : id_(id), closer_(closer) {
    if (id_ < 0) throw IoError("HDF5 handle creation failed");
  }
  Handle(Handle&& o) noexcept : id_(o.id_), closer_(o.closer_) { o.id_ = -1; }
  Handle& operator=(Handle&& o) noexcept {
    reset();
    id_ = o.id_;
    closer_ = o.closer_;
    o.id_ = -1;
    return *this;
  }
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { reset(); }
  hid_t get() const { return id_; }
  operator hid_t() const { return id_; }

 private:
  void reset() {
    if (id_ >= 0 && closer_) closer_(id_);
    id_ = -1;
  }
  hid_t id_ = -1;
  Closer closer_ = nullptr;
};

inline void silence_errors() { H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr); }

/// File access property list pinned to the 1.8 format so identical content
/// serializes to identical bytes across library patch levels.
inline Handle stable_fapl() {
  Handle fapl(H5Pcreate(H5P_FILE_ACCESS), H5Pclose);
  H5Pset_libver_bounds(fapl, H5F_LIBVER_V18, H5F_LIBVER_V18);
  return fapl;
}

/// Creation property list with object timestamps disabled (reproducible
/// output bytes).
inline Handle no_time_plist(hid_t cls) {
  Handle p(H5Pcreate(cls), H5Pclose);
  H5Pset_obj_track_times(p, 0);
  return p;
}

inline Handle create_file(const std::string& path) {
  silence_errors();
  Handle fcpl = no_time_plist(H5P_FILE_CREATE);
  Handle fapl = stable_fapl();
  hid_t f = H5Fcreate(path.c_str(), H5F_ACC_TRUNC, fcpl, fapl);
  if (f < 0) throw IoError("cannot create HDF5 file: " + path);
  return Handle(f, H5Fclose);
}

inline Handle open_file(const std::string& path) {
  silence_errors();
  Handle fapl = stable_fapl();
  hid_t f = H5Fopen(path.c_str(), H5F_ACC_RDONLY, fapl);
  if (f < 0) throw IoError("cannot open HDF5 file: " + path);
  return Handle(f, H5Fclose);
}

inline Handle create_group(hid_t loc, const std::string& name) {
  Handle gcpl = no_time_plist(H5P_GROUP_CREATE);
  hid_t g = H5Gcreate2(loc, name.c_str(), H5P_DEFAULT, gcpl, H5P_DEFAULT);
  if (g < 0) throw IoError("cannot create HDF5 group: " + name);
  return Handle(g, H5Gclose);
}

inline Handle open_group(hid_t loc, const std::string& name) {
  hid_t g = H5Gopen2(loc, name.c_str(), H5P_DEFAULT);
  if (g < 0) throw IoError("cannot open HDF5 group: " + name);
  return Handle(g, H5Gclose);
}

inline bool link_exists(hid_t loc, const std::string& name) {
  return H5Lexists(loc, name.c_str(), H5P_DEFAULT) > 0;
}

// ---- datasets -------------------------------------------------------------

template <typename T>
hid_t native_type();
template <>
inline hid_t native_type<float>() { return H5T_NATIVE_FLOAT; }
template <>
inline hid_t native_type<double>() { return H5T_NATIVE_DOUBLE; }
template <>
inline hid_t native_type<std::int32_t>() { return H5T_NATIVE_INT32; }
template <>
inline hid_t native_type<std::int64_t>() { return H5T_NATIVE_INT64; }
template <>
inline hid_t native_type<std::uint64_t>() { return H5T_NATIVE_UINT64; }

template <typename T>
void write_dataset(hid_t loc, const std::string& name, const T* data,
                   const std::vector<hsize_t>& dims) {
  Handle space(H5Screate_simple(static_cast<int>(dims.size()), dims.data(),
                                nullptr),
               H5Sclose);
  Handle dcpl = no_time_plist(H5P_DATASET_CREATE);
  H5Pset_layout(dcpl, H5D_CONTIGUOUS);
  Handle dset(H5Dcreate2(loc, name.c_str(), native_type<T>(), space, H5P_DEFAULT,
                         dcpl, H5P_DEFAULT),
              H5Dclose);
  hsize_t n = 1;
  for (hsize_t d : dims) n *= d;
  if (n > 0) {
    if (H5Dwrite(dset, native_type<T>(), H5S_ALL, H5S_ALL, H5P_DEFAULT, data) <
        0)
      throw IoError("HDF5 dataset write failed: " + name);
  }
}

inline std::vector<hsize_t> dataset_dims(hid_t loc, const std::string& name) {
  Handle dset(H5Dopen2(loc, name.c_str(), H5P_DEFAULT), H5Dclose);
  Handle space(H5Dget_space(dset), H5Sclose);
  int nd = H5Sget_simple_extent_ndims(space);
  std::vector<hsize_t> dims(nd);
  H5Sget_simple_extent_dims(space, dims.data(), nullptr);
  return dims;
}

template <typename T>
void read_dataset(hid_t loc, const std::string& name, T* data) {
  Handle dset(H5Dopen2(loc, name.c_str(), H5P_DEFAULT), H5Dclose);
  Handle space(H5Dget_space(dset), H5Sclose);
  if (H5Sget_simple_extent_npoints(space) == 0) return;
  if (H5Dread(dset, native_type<T>(), H5S_ALL, H5S_ALL, H5P_DEFAULT, data) < 0)
    throw IoError("HDF5 dataset read failed: " + name);
}

// ---- attributes -----------------------------------------------------------

inline void write_attr(hid_t loc, const std::string& name,
                       const std::string& value) {
  Handle type(H5Tcopy(H5T_C_S1), H5Tclose);
  H5Tset_size(type, value.empty() ? 1 : value.size());
  H5Tset_strpad(type, H5T_STR_NULLPAD);
  Handle space(H5Screate(H5S_SCALAR), H5Sclose);
  Handle attr(H5Acreate2(loc, name.c_str(), type, space, H5P_DEFAULT,
                         H5P_DEFAULT),
              H5Aclose);
  const char* p = value.empty() ? "\0" : value.data();
  if (H5Awrite(attr, type, p) < 0) throw IoError("attr write failed: " + name);
}

template <typename T>
void write_attr(hid_t loc, const std::string& name, T value) {
  Handle space(H5Screate(H5S_SCALAR), H5Sclose);
  Handle attr(H5Acreate2(loc, name.c_str(), native_type<T>(), space,
                         H5P_DEFAULT, H5P_DEFAULT),
              H5Aclose);
  if (H5Awrite(attr, native_type<T>(), &value) < 0)
    throw IoError("attr write failed: " + name);
}

inline bool attr_exists(hid_t loc, const std::string& name) {
  return H5Aexists(loc, name.c_str()) > 0;
}

inline std::string read_string_attr(hid_t loc, const std::string& name) {
  if (!attr_exists(loc, name)) throw SchemaMismatch("missing attr: " + name);
  Handle attr(H5Aopen(loc, name.c_str(), H5P_DEFAULT), H5Aclose);
  Handle type(H5Aget_type(attr), H5Tclose);
  std::size_t sz = H5Tget_size(type);
  std::string out(sz, '\0');
  Handle mem(H5Tcopy(H5T_C_S1), H5Tclose);
  H5Tset_size(mem, sz);
  H5Tset_strpad(mem, H5T_STR_NULLPAD);
  if (H5Aread(attr, mem, out.data()) < 0)
    throw IoError("attr read failed: " + name);
  while (!out.empty() && out.back() == '\0') out.pop_back();
  return out;
}

template <typename T>
T read_attr(hid_t loc, const std::string& name) {
  if (!attr_exists(loc, name)) throw SchemaMismatch("missing attr: " + name);
  Handle attr(H5Aopen(loc, name.c_str(), H5P_DEFAULT), H5Aclose);
  T value{};
  if (H5Aread(attr, native_type<T>(), &value) < 0)
    throw IoError("attr read failed: " + name);
  return value;
}

inline std::vector<std::string> child_names(hid_t loc) {
  H5G_info_t info;
  H5Gget_info(loc, &info);
  std::vector<std::string> names;
  names.reserve(info.nlinks);
  for (hsize_t i = 0; i < info.nlinks; ++i) {
    ssize_t len = H5Lget_name_by_idx(loc, ".", H5_INDEX_NAME, H5_ITER_INC, i,
                                     nullptr, 0, H5P_DEFAULT);
    std::string name(static_cast<std::size_t>(len), '\0');
    H5Lget_name_by_idx(loc, ".", H5_INDEX_NAME, H5_ITER_INC, i, name.data(),
                       name.size() + 1, H5P_DEFAULT);
    names.push_back(name);
  }
  return names;
}

}  // namespace histcode::h5
