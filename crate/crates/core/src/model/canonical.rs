//! Canonical binary encoding used for every digest and signature.
//!
//! Layout rules:
//!
//! - struct: 4-byte big-endian field count, then each field as
//!   `(name, value)` with fields sorted lexicographically by name
//! - string / bytes: 4-byte big-endian length prefix followed by UTF-8 / raw bytes
//! - integers: fixed-width big-endian; `bool` is one byte (0 or 1)
//! - sequences: 4-byte count, then elements in order
//! - maps: 4-byte count, then entries sorted by their encoded key bytes
//! - option: tag byte 0 (none) or 1 (some) followed by the value
//! - enum variants: 1-byte variant index followed by the payload
//! - tuples and newtypes: elements only, no prefix
//!
//! Floating point values are rejected; no domain type carries one.
//!
//! The decoder is not self-describing. It only supports types whose
//! `Deserialize` impl drives a concrete `deserialize_*` call, which holds for
//! derived structs and externally tagged enums.

use serde::de::{self, DeserializeSeed, IntoDeserializer, Visitor};
use serde::ser::{self, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("{0}")]
    Message(String),
    #[error("floating point values have no canonical encoding")]
    Float,
    #[error("enum has more than 256 variants")]
    TooManyVariants,
    #[error("length {0} does not fit in 32 bits")]
    TooLong(usize),
    #[error("unexpected end of input")]
    Eof,
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid utf-8 in string")]
    Utf8,
    #[error("invalid tag byte {0}")]
    InvalidTag(u8),
    #[error("format is not self-describing; cannot decode `{0}`")]
    NotSelfDescribing(&'static str),
}

impl ser::Error for CanonicalError {
    fn custom<T: std::fmt::Display>(msg: T) -> Self {
        CanonicalError::Message(msg.to_string())
    }
}

impl de::Error for CanonicalError {
    fn custom<T: std::fmt::Display>(msg: T) -> Self {
        CanonicalError::Message(msg.to_string())
    }
}

type Result<T> = std::result::Result<T, CanonicalError>;

/// Encodes `value` with the canonical layout.
pub fn to_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    value.serialize(&mut Encoder { out: &mut out })?;
    Ok(out)
}

/// Decodes a value previously produced by [`to_bytes`]. The whole input must
/// be consumed.
pub fn from_bytes<'de, T: serde::Deserialize<'de>>(input: &'de [u8]) -> Result<T> {
    let mut decoder = Decoder { input };
    let value = T::deserialize(&mut decoder)?;
    if !decoder.input.is_empty() {
        return Err(CanonicalError::TrailingBytes(decoder.input.len()));
    }
    Ok(value)
}

/// Convenience for domain types, whose encoding cannot fail.
pub trait Canonical: Serialize {
    fn canonical_bytes(&self) -> Vec<u8> {
        to_bytes(self).expect("domain types have a canonical encoding")
    }
}

impl<T: Serialize + ?Sized> Canonical for T {}

fn len_prefix(out: &mut Vec<u8>, len: usize) -> Result<()> {
    let len = u32::try_from(len).map_err(|_| CanonicalError::TooLong(len))?;
    out.extend_from_slice(&len.to_be_bytes());
    Ok(())
}

fn variant_tag(out: &mut Vec<u8>, index: u32) -> Result<()> {
    let tag = u8::try_from(index).map_err(|_| CanonicalError::TooManyVariants)?;
    out.push(tag);
    Ok(())
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct Encoder<'a> {
    out: &'a mut Vec<u8>,
}

/// Buffers sequence elements so the count can be written first even when the
/// length is not known up front.
struct SeqEncoder<'a> {
    out: &'a mut Vec<u8>,
    buf: Vec<u8>,
    count: usize,
}

/// Tuples have a fixed arity known to both sides; elements go straight out.
struct TupleEncoder<'a> {
    out: &'a mut Vec<u8>,
}

struct MapEncoder<'a> {
    out: &'a mut Vec<u8>,
    entries: Vec<(Vec<u8>, Vec<u8>)>,
    pending_key: Option<Vec<u8>>,
}

struct StructEncoder<'a> {
    out: &'a mut Vec<u8>,
    fields: Vec<(&'static str, Vec<u8>)>,
}

impl StructEncoder<'_> {
    fn finish(mut self) -> Result<()> {
        self.fields.sort_by(|a, b| a.0.cmp(b.0));
        len_prefix(self.out, self.fields.len())?;
        for (name, bytes) in self.fields {
            len_prefix(self.out, name.len())?;
            self.out.extend_from_slice(name.as_bytes());
            self.out.extend_from_slice(&bytes);
        }
        Ok(())
    }
}

impl<'a, 'b> ser::Serializer for &'b mut Encoder<'a> {
    type Ok = ();
    type Error = CanonicalError;
    type SerializeSeq = SeqEncoder<'b>;
    type SerializeTuple = TupleEncoder<'b>;
    type SerializeTupleStruct = TupleEncoder<'b>;
    type SerializeTupleVariant = TupleEncoder<'b>;
    type SerializeMap = MapEncoder<'b>;
    type SerializeStruct = StructEncoder<'b>;
    type SerializeStructVariant = StructEncoder<'b>;

    fn is_human_readable(&self) -> bool {
        false
    }

    fn serialize_bool(self, v: bool) -> Result<()> {
        self.out.push(u8::from(v));
        Ok(())
    }
    fn serialize_i8(self, v: i8) -> Result<()> {
        self.out.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn serialize_i16(self, v: i16) -> Result<()> {
        self.out.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn serialize_i32(self, v: i32) -> Result<()> {
        self.out.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn serialize_i64(self, v: i64) -> Result<()> {
        self.out.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn serialize_u8(self, v: u8) -> Result<()> {
        self.out.push(v);
        Ok(())
    }
    fn serialize_u16(self, v: u16) -> Result<()> {
        self.out.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn serialize_u32(self, v: u32) -> Result<()> {
        self.out.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn serialize_u64(self, v: u64) -> Result<()> {
        self.out.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn serialize_f32(self, _v: f32) -> Result<()> {
        Err(CanonicalError::Float)
    }
    fn serialize_f64(self, _v: f64) -> Result<()> {
        Err(CanonicalError::Float)
    }
    fn serialize_char(self, v: char) -> Result<()> {
        self.serialize_u32(v as u32)
    }
    fn serialize_str(self, v: &str) -> Result<()> {
        len_prefix(self.out, v.len())?;
        self.out.extend_from_slice(v.as_bytes());
        Ok(())
    }
    fn serialize_bytes(self, v: &[u8]) -> Result<()> {
        len_prefix(self.out, v.len())?;
        self.out.extend_from_slice(v);
        Ok(())
    }
    fn serialize_none(self) -> Result<()> {
        self.out.push(0);
        Ok(())
    }
    fn serialize_some<T: Serialize + ?Sized>(self, value: &T) -> Result<()> {
        self.out.push(1);
        value.serialize(self)
    }
    fn serialize_unit(self) -> Result<()> {
        Ok(())
    }
    fn serialize_unit_struct(self, _name: &'static str) -> Result<()> {
        Ok(())
    }
    fn serialize_unit_variant(self, _name: &'static str, index: u32, _variant: &'static str) -> Result<()> {
        variant_tag(self.out, index)
    }
    fn serialize_newtype_struct<T: Serialize + ?Sized>(self, _name: &'static str, value: &T) -> Result<()> {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        index: u32,
        _variant: &'static str,
        value: &T,
    ) -> Result<()> {
        variant_tag(self.out, index)?;
        value.serialize(self)
    }
    fn serialize_seq(self, _len: Option<usize>) -> Result<Self::SerializeSeq> {
        Ok(SeqEncoder { out: self.out, buf: Vec::new(), count: 0 })
    }
    fn serialize_tuple(self, _len: usize) -> Result<Self::SerializeTuple> {
        Ok(TupleEncoder { out: self.out })
    }
    fn serialize_tuple_struct(self, _name: &'static str, _len: usize) -> Result<Self::SerializeTupleStruct> {
        Ok(TupleEncoder { out: self.out })
    }
    fn serialize_tuple_variant(
        self,
        _name: &'static str,
        index: u32,
        _variant: &'static str,
        _len: usize,
    ) -> Result<Self::SerializeTupleVariant> {
        variant_tag(self.out, index)?;
        Ok(TupleEncoder { out: self.out })
    }
    fn serialize_map(self, _len: Option<usize>) -> Result<Self::SerializeMap> {
        Ok(MapEncoder { out: self.out, entries: Vec::new(), pending_key: None })
    }
    fn serialize_struct(self, _name: &'static str, len: usize) -> Result<Self::SerializeStruct> {
        Ok(StructEncoder { out: self.out, fields: Vec::with_capacity(len) })
    }
    fn serialize_struct_variant(
        self,
        _name: &'static str,
        index: u32,
        _variant: &'static str,
        len: usize,
    ) -> Result<Self::SerializeStructVariant> {
        variant_tag(self.out, index)?;
        Ok(StructEncoder { out: self.out, fields: Vec::with_capacity(len) })
    }
}

impl ser::SerializeSeq for SeqEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;

    fn serialize_element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<()> {
        self.count += 1;
        value.serialize(&mut Encoder { out: &mut self.buf })
    }

    fn end(self) -> Result<()> {
        len_prefix(self.out, self.count)?;
        self.out.extend_from_slice(&self.buf);
        Ok(())
    }
}

macro_rules! tuple_encoder {
    ($trait:ident, $method:ident) => {
        impl ser::$trait for TupleEncoder<'_> {
            type Ok = ();
            type Error = CanonicalError;

            fn $method<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<()> {
                value.serialize(&mut Encoder { out: self.out })
            }

            fn end(self) -> Result<()> {
                Ok(())
            }
        }
    };
}

tuple_encoder!(SerializeTuple, serialize_element);
tuple_encoder!(SerializeTupleStruct, serialize_field);
tuple_encoder!(SerializeTupleVariant, serialize_field);

impl ser::SerializeMap for MapEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;

    fn serialize_key<T: Serialize + ?Sized>(&mut self, key: &T) -> Result<()> {
        self.pending_key = Some(to_bytes(key)?);
        Ok(())
    }

    fn serialize_value<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<()> {
        let key = self.pending_key.take().ok_or_else(|| CanonicalError::Message("map value without key".into()))?;
        self.entries.push((key, to_bytes(value)?));
        Ok(())
    }

    fn end(mut self) -> Result<()> {
        self.entries.sort();
        len_prefix(self.out, self.entries.len())?;
        for (k, v) in self.entries {
            self.out.extend_from_slice(&k);
            self.out.extend_from_slice(&v);
        }
        Ok(())
    }
}

impl ser::SerializeStruct for StructEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;

    fn serialize_field<T: Serialize + ?Sized>(&mut self, key: &'static str, value: &T) -> Result<()> {
        self.fields.push((key, to_bytes(value)?));
        Ok(())
    }

    fn end(self) -> Result<()> {
        self.finish()
    }
}

impl ser::SerializeStructVariant for StructEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;

    fn serialize_field<T: Serialize + ?Sized>(&mut self, key: &'static str, value: &T) -> Result<()> {
        self.fields.push((key, to_bytes(value)?));
        Ok(())
    }

    fn end(self) -> Result<()> {
        self.finish()
    }
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

struct Decoder<'de> {
    input: &'de [u8],
}

impl<'de> Decoder<'de> {
    fn take(&mut self, n: usize) -> Result<&'de [u8]> {
        if self.input.len() < n {
            return Err(CanonicalError::Eof);
        }
        let (head, tail) = self.input.split_at(n);
        self.input = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        buf.copy_from_slice(self.take(N)?);
        Ok(buf)
    }

    fn read_len(&mut self) -> Result<usize> {
        Ok(u32::from_be_bytes(self.array()?) as usize)
    }

    fn read_bytes(&mut self) -> Result<&'de [u8]> {
        let len = self.read_len()?;
        self.take(len)
    }

    fn read_str(&mut self) -> Result<&'de str> {
        std::str::from_utf8(self.read_bytes()?).map_err(|_| CanonicalError::Utf8)
    }

    fn read_tag(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

macro_rules! decode_int {
    ($method:ident, $visit:ident, $ty:ty) => {
        fn $method<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
            visitor.$visit(<$ty>::from_be_bytes(self.array()?))
        }
    };
}

impl<'de> de::Deserializer<'de> for &mut Decoder<'de> {
    type Error = CanonicalError;

    fn is_human_readable(&self) -> bool {
        false
    }

    fn deserialize_any<V: Visitor<'de>>(self, _visitor: V) -> Result<V::Value> {
        Err(CanonicalError::NotSelfDescribing("any"))
    }

    fn deserialize_bool<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        match self.read_tag()? {
            0 => visitor.visit_bool(false),
            1 => visitor.visit_bool(true),
            other => Err(CanonicalError::InvalidTag(other)),
        }
    }

    decode_int!(deserialize_i8, visit_i8, i8);
    decode_int!(deserialize_i16, visit_i16, i16);
    decode_int!(deserialize_i32, visit_i32, i32);
    decode_int!(deserialize_i64, visit_i64, i64);
    decode_int!(deserialize_u8, visit_u8, u8);
    decode_int!(deserialize_u16, visit_u16, u16);
    decode_int!(deserialize_u32, visit_u32, u32);
    decode_int!(deserialize_u64, visit_u64, u64);

    fn deserialize_f32<V: Visitor<'de>>(self, _visitor: V) -> Result<V::Value> {
        Err(CanonicalError::Float)
    }
    fn deserialize_f64<V: Visitor<'de>>(self, _visitor: V) -> Result<V::Value> {
        Err(CanonicalError::Float)
    }

    fn deserialize_char<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        let raw = u32::from_be_bytes(self.array()?);
        let c = char::from_u32(raw).ok_or_else(|| CanonicalError::Message(format!("invalid char {raw:#x}")))?;
        visitor.visit_char(c)
    }

    fn deserialize_str<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        visitor.visit_borrowed_str(self.read_str()?)
    }
    fn deserialize_string<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        self.deserialize_str(visitor)
    }
    fn deserialize_bytes<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        visitor.visit_borrowed_bytes(self.read_bytes()?)
    }
    fn deserialize_byte_buf<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        self.deserialize_bytes(visitor)
    }

    fn deserialize_option<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        match self.read_tag()? {
            0 => visitor.visit_none(),
            1 => visitor.visit_some(self),
            other => Err(CanonicalError::InvalidTag(other)),
        }
    }

    fn deserialize_unit<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        visitor.visit_unit()
    }
    fn deserialize_unit_struct<V: Visitor<'de>>(self, _name: &'static str, visitor: V) -> Result<V::Value> {
        visitor.visit_unit()
    }
    fn deserialize_newtype_struct<V: Visitor<'de>>(self, _name: &'static str, visitor: V) -> Result<V::Value> {
        visitor.visit_newtype_struct(self)
    }

    fn deserialize_seq<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        let remaining = self.read_len()?;
        visitor.visit_seq(Counted { de: self, remaining })
    }
    fn deserialize_tuple<V: Visitor<'de>>(self, len: usize, visitor: V) -> Result<V::Value> {
        visitor.visit_seq(Counted { de: self, remaining: len })
    }
    fn deserialize_tuple_struct<V: Visitor<'de>>(
        self,
        _name: &'static str,
        len: usize,
        visitor: V,
    ) -> Result<V::Value> {
        self.deserialize_tuple(len, visitor)
    }

    fn deserialize_map<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        let remaining = self.read_len()?;
        visitor.visit_map(Counted { de: self, remaining })
    }

    fn deserialize_struct<V: Visitor<'de>>(
        self,
        _name: &'static str,
        _fields: &'static [&'static str],
        visitor: V,
    ) -> Result<V::Value> {
        self.deserialize_map(visitor)
    }

    fn deserialize_enum<V: Visitor<'de>>(
        self,
        _name: &'static str,
        _variants: &'static [&'static str],
        visitor: V,
    ) -> Result<V::Value> {
        visitor.visit_enum(self)
    }

    fn deserialize_identifier<V: Visitor<'de>>(self, visitor: V) -> Result<V::Value> {
        self.deserialize_str(visitor)
    }

    fn deserialize_ignored_any<V: Visitor<'de>>(self, _visitor: V) -> Result<V::Value> {
        Err(CanonicalError::NotSelfDescribing("ignored value"))
    }
}

struct Counted<'a, 'de> {
    de: &'a mut Decoder<'de>,
    remaining: usize,
}

impl<'de> de::SeqAccess<'de> for Counted<'_, 'de> {
    type Error = CanonicalError;

    fn next_element_seed<T: DeserializeSeed<'de>>(&mut self, seed: T) -> Result<Option<T::Value>> {
        if self.remaining == 0 {
            return Ok(None);
        }
        self.remaining -= 1;
        seed.deserialize(&mut *self.de).map(Some)
    }

    fn size_hint(&self) -> Option<usize> {
        // Cap the hint: the count is untrusted input.
        Some(self.remaining.min(1024))
    }
}

impl<'de> de::MapAccess<'de> for Counted<'_, 'de> {
    type Error = CanonicalError;

    fn next_key_seed<K: DeserializeSeed<'de>>(&mut self, seed: K) -> Result<Option<K::Value>> {
        if self.remaining == 0 {
            return Ok(None);
        }
        self.remaining -= 1;
        seed.deserialize(&mut *self.de).map(Some)
    }

    fn next_value_seed<V: DeserializeSeed<'de>>(&mut self, seed: V) -> Result<V::Value> {
        seed.deserialize(&mut *self.de)
    }

    fn size_hint(&self) -> Option<usize> {
        Some(self.remaining.min(1024))
    }
}

impl<'de> de::EnumAccess<'de> for &mut Decoder<'de> {
    type Error = CanonicalError;
    type Variant = Self;

    fn variant_seed<V: DeserializeSeed<'de>>(self, seed: V) -> Result<(V::Value, Self)> {
        let tag = u32::from(self.read_tag()?);
        let value = seed.deserialize(IntoDeserializer::<CanonicalError>::into_deserializer(tag))?;
        Ok((value, self))
    }
}

impl<'de> de::VariantAccess<'de> for &mut Decoder<'de> {
    type Error = CanonicalError;

    fn unit_variant(self) -> Result<()> {
        Ok(())
    }

    fn newtype_variant_seed<T: DeserializeSeed<'de>>(self, seed: T) -> Result<T::Value> {
        seed.deserialize(self)
    }

    fn tuple_variant<V: Visitor<'de>>(self, len: usize, visitor: V) -> Result<V::Value> {
        de::Deserializer::deserialize_tuple(self, len, visitor)
    }

    fn struct_variant<V: Visitor<'de>>(self, _fields: &'static [&'static str], visitor: V) -> Result<V::Value> {
        de::Deserializer::deserialize_map(self, visitor)
    }
}
